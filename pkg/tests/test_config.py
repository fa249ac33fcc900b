import pytest

from concertfp.config import CONFIG_ENV, ConfigError, PipelineConfig, load_config, parse_config


def test_defaults():
    cfg = PipelineConfig()
    assert (cfg.t_l, cfg.t_d, cfg.strict_filter) == (5, -0.07, False)
    assert cfg.frame_s == pytest.approx(256 / 11025)
    assert cfg.stft.n_bins == 257 and cfg.pairing.fan_out == 3 and cfg.peaks.max_per_frame == 5


def test_parse_types_and_comments():
    text = """
    # thresholds
    t_l = 7
    t_d = -0.1   # steeper
    strict_filter = yes
    out_dir = reports/run 1
    """
    assert parse_config(text) == {"t_l": 7, "t_d": -0.1, "strict_filter": True, "out_dir": "reports/run 1"}


@pytest.mark.parametrize("text", ["bogus = 1", "t_l 5", "t_l = five", "strict_filter = maybe"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_file_then_overrides(tmp_path):
    path = tmp_path / "c.conf"
    path.write_text("t_l = 8\njobs = 2\n")
    cfg = load_config(path, {"t_l": 6, "t_d": None})
    assert cfg.t_l == 6 and cfg.jobs == 2 and cfg.t_d == -0.07


def test_env_var_default(tmp_path, monkeypatch):
    path = tmp_path / "c.conf"
    path.write_text("t_d = -0.2\n")
    monkeypatch.setenv(CONFIG_ENV, str(path))
    assert load_config().t_d == -0.2
    monkeypatch.setenv(CONFIG_ENV, str(tmp_path / "missing.conf"))
    with pytest.raises(ConfigError):
        load_config()


@pytest.mark.parametrize("bad", [{"t_d": 0.1}, {"t_l": 0}, {"jobs": 0}, {"hop_size": 1024}, {"df_max": 40}])
def test_invalid_values_rejected(bad):
    with pytest.raises(ConfigError):
        load_config(None, bad)


def test_replace_and_dict():
    cfg = PipelineConfig().replace(t_l=9, t_d=None)
    assert cfg.t_l == 9 and cfg.as_dict()["t_l"] == 9
    with pytest.raises(ConfigError):
        PipelineConfig().replace(nope=1)
