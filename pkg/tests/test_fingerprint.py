import io
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from concertfp.audio_io import AudioClip
from concertfp.fingerprint import (
    FP_MAGIC,
    Fingerprint,
    FingerprintFormatError,
    Landmark,
    PairParams,
    Peak,
    PeakParams,
    StftParams,
    TooShortError,
    compute_spectrogram,
    extract_peaks,
    fingerprint_clip,
    fingerprint_from_bytes,
    fingerprint_to_bytes,
    fingerprint_to_json,
    hash_landmark,
    hash_landmarks,
    neighborhood_max_excluding_center,
    pair_landmarks,
    read_fingerprint_record,
    write_fingerprint_record,
)

from oracles import pairs_bruteforce, peaks_bruteforce, random_grid


def tone(freq, seconds=1.0, rate=11025, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return AudioClip(rate, amp * np.sin(2 * np.pi * freq * t))


# --- spectrogram ---------------------------------------------------------


def test_spectrogram_shape_and_scales():
    spec = compute_spectrogram(tone(1000.0))
    assert spec.n_bins == 257
    assert spec.n_frames == 1 + (11025 - 512) // 256
    assert spec.frame_duration_s == pytest.approx(256 / 11025)
    assert spec.bin_width_hz == pytest.approx(11025 / 512)


def test_spectrogram_tone_lands_in_expected_bin():
    spec = compute_spectrogram(tone(1000.0))
    peak_bins = spec.magnitudes.argmax(axis=1)
    assert np.all(np.abs(peak_bins - 1000 / (11025 / 512)) <= 1)


def test_spectrogram_is_log_magnitude():
    spec = compute_spectrogram(AudioClip(11025, np.zeros(2048)))
    assert np.all(spec.magnitudes == 0.0)


def test_spectrogram_rejects_short_and_stereo():
    with pytest.raises(TooShortError):
        compute_spectrogram(AudioClip(11025, np.zeros(511)))
    with pytest.raises(ValueError):
        compute_spectrogram(AudioClip(11025, np.zeros((2, 4096))))


def test_stft_params_validate():
    assert StftParams().n_bins == 257
    with pytest.raises(ValueError):
        StftParams(512, 0)
    with pytest.raises(ValueError):
        StftParams(500, 256)


# --- peaks ---------------------------------------------------------------


def test_single_spike_is_the_only_peak():
    g = np.zeros((30, 40))
    g[12, 20] = 3.0
    assert extract_peaks(g) == [Peak(12, 20, 3.0)]


def test_plateau_has_no_strict_peak():
    g = np.zeros((20, 20))
    g[5, 5] = g[5, 6] = 2.0
    assert extract_peaks(g, (2, 2)) == []


def test_values_at_floor_are_not_peaks():
    g = np.zeros((5, 5))
    g[2, 2] = 1e-6
    assert extract_peaks(g, (1, 1)) == []


def test_per_frame_cap_prefers_magnitude_then_low_bin():
    g = np.zeros((1, 40))
    for b, m in [(0, 1.0), (10, 5.0), (20, 5.0), (30, 2.0)]:
        g[0, b] = m
    assert [p.bin for p in extract_peaks(g, (1, 2), max_per_frame=2)] == [10, 20]
    assert [p.bin for p in extract_peaks(g, (1, 2), max_per_frame=1)] == [10]


def test_neighborhood_max_matches_direct_scan():
    rng = np.random.default_rng(3)
    g = rng.random((13, 17))
    got = neighborhood_max_excluding_center(g, 2, 3)
    for t in range(13):
        for f in range(17):
            block = g[max(0, t - 2) : t + 3, max(0, f - 3) : f + 4].copy()
            block[min(t, 2), min(f, 3)] = -np.inf
            assert got[t, f] == block.max()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 8), st.integers(1, 6))
def test_peaks_match_bruteforce(seed, nt, nf, cap):
    g = random_grid(np.random.default_rng(seed), 30)
    assert extract_peaks(g, (nt, nf), cap, 1e-6) == peaks_bruteforce(g, nt, nf, cap, 1e-6)


def test_extract_peaks_accepts_spectrogram():
    spec = compute_spectrogram(tone(440.0))
    assert extract_peaks(spec) == extract_peaks(spec.magnitudes)


# --- pairing -------------------------------------------------------------


def test_pairing_nearest_in_time_first():
    peaks = [Peak(0, 10, 1), Peak(1, 40, 1), Peak(2, 9, 1), Peak(2, 11, 1), Peak(3, 10, 1), Peak(9, 10, 1)]
    lms = pair_landmarks(peaks, fan_out=3)
    assert lms[:3] == [Landmark(10, 40, 0, 1), Landmark(10, 9, 0, 2), Landmark(10, 11, 0, 2)]


def test_pairing_respects_zone():
    peaks = [Peak(0, 100, 1), Peak(0, 101, 1), Peak(64, 100, 1), Peak(5, 140, 1), Peak(5, 60, 1)]
    assert pair_landmarks(peaks) == []


def test_pairing_fan_out_and_dt_max_edges():
    peaks = [Peak(0, 0, 1)] + [Peak(t, 0, 1) for t in (63, 64)]
    assert pair_landmarks(peaks, fan_out=5) == [Landmark(0, 0, 0, 63), Landmark(0, 0, 63, 1)]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 20), st.integers(0, 12))
def test_pairing_matches_bruteforce(seed, fan_out, dt_max, df_max):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(0, 101))
    cells = rng.choice(40 * 30, size=min(n, 1200), replace=False)
    peaks = sorted(Peak(int(c // 30), int(c % 30), 1.0) for c in cells)
    got = [tuple(lm) for lm in pair_landmarks(peaks, fan_out, dt_max, df_max)]
    assert got == pairs_bruteforce(peaks, fan_out, dt_max, df_max)


def test_pair_params_validate():
    with pytest.raises(ValueError):
        PairParams(0, 63, 31)
    with pytest.raises(ValueError):
        PairParams(3, 64, 31)
    with pytest.raises(ValueError):
        PairParams(3, 63, 32)
    with pytest.raises(ValueError):
        PeakParams(0, 15, 5, 1e-6)


# --- hashing -------------------------------------------------------------


def test_hash_examples():
    assert hash_landmark(Landmark(0, 0, 0, 1)) == 1985
    assert hash_landmark(Landmark(100, 110, 7, 20)) == 412244
    assert hash_landmark(Landmark(511, 511 + 31, 0, 63)) == (511 << 12) | (62 << 6) | 63


@pytest.mark.parametrize(
    "lm", [Landmark(512, 512, 0, 1), Landmark(-1, 0, 0, 1), Landmark(10, 42, 0, 1), Landmark(10, 10, 0, 0),
           Landmark(10, 10, 0, 64)]
)
def test_hash_rejects_out_of_range(lm):
    with pytest.raises(ValueError):
        hash_landmark(lm)
    with pytest.raises(ValueError):
        hash_landmarks(np.array([lm]))


def test_hash_injective_on_reduced_range():
    f = np.arange(65)
    f1, d, dt = np.meshgrid(f, np.arange(-31, 32), np.arange(1, 64), indexing="ij")
    keep = (f1 + d >= 0)
    lms = np.stack([f1[keep], (f1 + d)[keep], np.zeros(keep.sum(), int), dt[keep]], axis=1)
    keys = hash_landmarks(lms)
    assert np.unique(keys).size == keys.size


@given(st.integers(0, 511), st.integers(-31, 31), st.integers(1, 63))
def test_hash_vector_equals_scalar(f1, d, dt):
    if f1 + d < 0:
        d = -d
    lm = Landmark(f1, f1 + d, 5, dt)
    assert int(hash_landmarks(np.array([lm]))[0]) == hash_landmark(lm)


# --- fingerprint and file format ----------------------------------------


def test_fingerprint_clip_deterministic_and_shift_invariant():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(11025 * 3) * 0.1
    a = fingerprint_clip(AudioClip(11025, x), "a")
    b = fingerprint_clip(AudioClip(11025, x), "a")
    assert a == b and a.total_landmarks > 0
    # dropping exactly 10 hops shifts every interior landmark by 10 frames
    c = fingerprint_clip(AudioClip(11025, x[2560:]), "c")
    shifted = {(f1, f2, t1 - 10, dt) for f1, f2, t1, dt in a.landmarks.tolist() if t1 >= 40}
    inner = {tuple(r) for r in c.landmarks.tolist() if 30 <= r[2] <= 60}
    assert len(inner & shifted) / len(inner) > 0.9


def test_empty_fingerprint_is_valid():
    fp = Fingerprint.from_landmarks("x", [])
    assert fp.total_landmarks == 0 and fp.landmarks.shape == (0, 4)
    assert fingerprint_from_bytes(fingerprint_to_bytes(fp)) == fp


lm_strategy = st.builds(
    lambda f1, d, t1, dt: Landmark(f1, max(0, f1 + d), t1, dt),
    st.integers(0, 511), st.integers(-31, 31), st.integers(0, 2**20), st.integers(1, 63),
)


@given(st.text(max_size=12), st.lists(lm_strategy, max_size=30))
def test_fingerprint_bytes_round_trip(sid, lms):
    fp = Fingerprint.from_landmarks(sid, lms)
    raw = fingerprint_to_bytes(fp)
    assert raw[:4] == FP_MAGIC
    assert fingerprint_from_bytes(raw) == fp
    buf = io.BytesIO()
    write_fingerprint_record(buf, fp)
    buf.seek(0)
    assert read_fingerprint_record(buf) == fp


def test_fingerprint_record_layout():
    fp = Fingerprint.from_landmarks("ab", [Landmark(1, 2, 3, 4)])
    raw = fingerprint_to_bytes(fp)
    assert raw == FP_MAGIC + struct.pack("<HH", 1, 2) + b"ab" + struct.pack("<I", 1) + struct.pack("<HHIH", 1, 2, 3, 4)


@pytest.mark.parametrize("mutate", [
    lambda r: b"XXXX" + r[4:],
    lambda r: r[:4] + struct.pack("<H", 9) + r[6:],
    lambda r: r[:-3],
    lambda r: r + b"\0",
])
def test_fingerprint_bytes_errors(mutate):
    raw = fingerprint_to_bytes(Fingerprint.from_landmarks("ab", [Landmark(1, 2, 3, 4)]))
    with pytest.raises(FingerprintFormatError):
        fingerprint_from_bytes(mutate(raw))


def test_fingerprint_json():
    fp = Fingerprint.from_landmarks("q", [Landmark(1, 2, 3, 4)])
    d = json.loads(fingerprint_to_json(fp))
    assert d["sample_id"] == "q" and d["total_landmarks"] == 1
    assert d["landmarks"] == [{"f1": 1, "f2": 2, "t1": 3, "dt": 4}]
