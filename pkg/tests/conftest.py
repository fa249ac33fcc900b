import pytest
from hypothesis import settings

from concertfp.corpus_gen import CorpusSpec, generate_corpus

settings.register_profile("default", deadline=None)
settings.load_profile("default")

SMALL_SPEC = CorpusSpec(
    seed=11, n_songs=3, song_duration_s=60.0, clips_per_song=(3, 5), crop_length_s=(12.0, 25.0)
)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Three short songs written to disk: (wav_dir, clips, manifest)."""
    out = tmp_path_factory.mktemp("small") / "wav"
    clips, manifest = generate_corpus(SMALL_SPEC, out)
    return out, clips, manifest


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
