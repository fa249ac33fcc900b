import itertools

import numpy as np
import pytest

from concertfp.corpus_gen import (
    LANDMARK_LEVEL,
    SAMPLE_LEVEL,
    ClipTruth,
    CorpusSpec,
    Manifest,
    derive_clip,
    generate_corpus,
    generate_song,
    inject_false_positives,
    plan_song_clips,
    rms,
)
from concertfp.fingerprint import fingerprint_clip
from concertfp.match_db import MatchDb, OffsetGroup, RawMatchingList

SMALL = CorpusSpec(seed=3, n_songs=2, song_duration_s=60.0, clips_per_song=(3, 4), crop_length_s=(12.0, 25.0))


@pytest.fixture(scope="module")
def song():
    return generate_song(1, 40.0)


def spectral_flatness(x):
    frames = np.lib.stride_tricks.sliding_window_view(x, 512)[::256]
    power = np.abs(np.fft.rfft(frames * np.hanning(512), axis=1)) ** 2 + 1e-12
    return float(np.mean(np.exp(np.mean(np.log(power), axis=1)) / np.mean(power, axis=1)))


def test_song_is_deterministic_and_seed_dependent(song):
    assert generate_song(1, 40.0) == song
    assert generate_song(2, 40.0) != song
    assert song.sample_rate == 11025 and song.n_samples == 40 * 11025
    assert np.abs(song.mono).max() == pytest.approx(0.6)


def test_song_is_tonal(song):
    noise = np.random.default_rng(0).standard_normal(song.n_samples) * 0.2
    assert spectral_flatness(song.mono) < 0.2 * spectral_flatness(noise)


def test_song_duration_floor():
    with pytest.raises(ValueError):
        generate_song(0, 29.0)


def test_two_seeds_do_not_cross_match():
    db = MatchDb()
    for s in (1, 2):
        db.insert(fingerprint_clip(generate_song(s, 60.0), str(s)))
    assert db.query(db.fingerprints["1"], 5).groups == ()


def test_identity_crop(song):
    clip = derive_clip(song, 2.0, 3.0)
    assert np.array_equal(clip.mono, song.mono[22050 : 22050 + 33075])


@pytest.mark.parametrize("snr", [5.0, 10.0, 25.0])
def test_noise_level_within_one_percent(song, snr):
    clean = derive_clip(song, 5.0, 10.0, gain=0.7)
    noisy = derive_clip(song, 5.0, 10.0, snr_db=snr, gain=0.7, seed=4)
    noise = noisy.mono - clean.mono
    assert rms(noise) == pytest.approx(rms(clean.mono) / 10 ** (snr / 20), rel=0.01)


def test_crop_out_of_bounds(song):
    with pytest.raises(ValueError):
        derive_clip(song, 35.0, 10.0)
    with pytest.raises(ValueError):
        derive_clip(song, -1.0, 10.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        CorpusSpec(clips_per_song=(1, 3))
    with pytest.raises(ValueError):
        CorpusSpec(snr_db=(20.0, 5.0))
    with pytest.raises(ValueError):
        CorpusSpec(reference_snr_db=30.0)
    with pytest.raises(ValueError):
        CorpusSpec(song_duration_s=100.0)
    with pytest.raises(ValueError):
        CorpusSpec(start_quantum_samples=0)


@pytest.mark.parametrize("seed", range(20))
def test_plan_overlaps_and_single_reference(seed):
    spec = CorpusSpec(seed=seed)
    for k in range(3):
        clips = plan_song_clips(spec, k)
        assert spec.clips_per_song[0] <= len(clips) <= spec.clips_per_song[1]
        assert sum(c.is_reference for c in clips) == 1
        ref = next(c for c in clips if c.is_reference)
        for c in clips:
            assert 0 <= c.crop_start_s and c.crop_start_s + c.crop_length_s <= spec.song_duration_s + 1e-9
            assert round(c.crop_start_s * 11025) % 256 == round(ref.crop_start_s * 11025) % 256 == 0
            assert ref.crop_start_s <= c.crop_start_s
            assert c.crop_start_s + c.crop_length_s <= ref.crop_start_s + ref.crop_length_s + 1e-9
        for a, b in itertools.combinations(clips, 2):
            overlap = min(a.crop_start_s + a.crop_length_s, b.crop_start_s + b.crop_length_s) - max(
                a.crop_start_s, b.crop_start_s
            )
            assert overlap >= spec.min_overlap_s - 1e-9


def test_corpus_written_and_reproducible(tmp_path):
    clips, man = generate_corpus(SMALL, tmp_path / "a")
    clips2, man2 = generate_corpus(SMALL, tmp_path / "b")
    assert man.to_json() == man2.to_json()
    for cid in clips:
        assert (tmp_path / "a" / f"{cid}.wav").read_bytes() == (tmp_path / "b" / f"{cid}.wav").read_bytes()
    assert Manifest.load(tmp_path / "a" / "manifest.json").to_json() == man.to_json()
    assert set(man.song_of().values()) == {"song00", "song01"}
    a, b = man.clips[0], man.clips[1]
    assert man.true_offset_s(a.clip_id, b.clip_id) == b.crop_start_s - a.crop_start_s


def test_manifest_schema_check():
    text = Manifest(spec={}).to_json().replace('"schema_version": 1', '"schema_version": 2')
    with pytest.raises(ValueError):
        Manifest.from_json(text)


# --- injection on hand-built lists ---------------------------------------


def hand_lists():
    # two songs, three clips each; true p values well spread
    ids = [f"s{s}_c{c}" for s in range(2) for c in range(3)]
    man = Manifest(spec={})
    for cid in ids:
        man.clips.append(ClipTruth(cid, cid[:2], 0.0, 10.0, 20.0, 1.0, cid.endswith("c0")))
    totals = dict.fromkeys(ids, 1000)
    order = {c: i for i, c in enumerate(ids)}
    raw = {}
    for q in ids:
        mates = [c for c in ids if c[:2] == q[:2] and c != q]
        raw[q] = RawMatchingList(q, (OffsetGroup(mates[0], 3, 400), OffsetGroup(mates[1], -2, 150)))
    return raw, man, totals, order


def test_injection_honours_constraints():
    raw, man, totals, order = hand_lists()
    out = inject_false_positives(raw, man, totals, order, n_sample=1, n_landmark=3, seed=1)
    song = man.song_of()
    kinds = [i.kind for i in man.injections]
    assert kinds.count(SAMPLE_LEVEL) == 1 and kinds.count(LANDMARK_LEVEL) == 3
    for inj in man.injections:
        groups = out[inj.query_id].groups
        assert OffsetGroup(inj.phantom_candidate_id, inj.offset_frames, inj.l) in groups
        if inj.kind == SAMPLE_LEVEL:
            assert song[inj.phantom_candidate_id] != song[inj.query_id]
            assert 5 <= inj.l <= 8
            true_p = [g.l / 1000 for g in raw[inj.query_id].groups]
            assert inj.l / 1000 <= min(true_p) - 0.07
        else:
            best = max(g.l for g in raw[inj.query_id].groups if g.candidate_id == inj.phantom_candidate_id)
            assert inj.l < best
    for q, r in out.items():
        ls = [g.l for g in r.groups]
        assert ls == sorted(ls, reverse=True)


def test_injection_skips_unreachable_lists():
    raw, man, totals, order = hand_lists()
    # two equal true candidates: both sit above any mean a phantom can produce
    raw = {q: RawMatchingList(q, tuple(OffsetGroup(g.candidate_id, g.offset_frames, 300) for g in r.groups))
           for q, r in raw.items()}
    inject_false_positives(raw, man, totals, order, n_sample=2, n_landmark=0)
    assert not man.injections
    assert {s["reason"] for s in man.skipped_injections} == {"no true candidate below the list mean"}
    man2 = hand_lists()[1]
    inject_false_positives(raw, man2, totals, order, n_sample=2, n_landmark=0, require_reachable=False)
    assert len(man2.injections) == 1  # the second would re-bridge the same two songs


def test_injection_is_seeded():
    raw, man, totals, order = hand_lists()
    raw2, man2, _, _ = hand_lists()
    assert inject_false_positives(raw, man, totals, order, 1, 2, seed=5) == inject_false_positives(
        raw2, man2, totals, order, 1, 2, seed=5
    )
    assert man.to_json() == man2.to_json()


def test_injection_p_gap_example():
    # a list whose minimum true p is 0.20 gets a phantom at p <= 0.15
    raw, man, totals, order = hand_lists()
    raw = {q: RawMatchingList(q, (r.groups[0], OffsetGroup(r.groups[1].candidate_id, 0, 200))) for q, r in raw.items()}
    inject_false_positives(raw, man, totals, order, n_sample=1, n_landmark=0, require_reachable=False)
    inj = man.injections[0]
    assert inj.l / totals[inj.phantom_candidate_id] <= 0.15 + 1e-12
