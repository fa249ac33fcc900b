"""Deterministic synthetic concert corpus with ground truth.

Each song is a seeded pentatonic melody.  Per song, one long near-clean
reference clip plus several noisy user clips are cropped so that every
pair of crops shares a common window of at least ``min_overlap_s``.
False positives are injected at the matching-list level.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .audio_io import ANALYSIS_RATE, AudioClip, write_wav
from .match_db import MatchDb, OffsetGroup, RawMatchingList

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SAMPLE_LEVEL = "sample_level"
LANDMARK_LEVEL = "landmark_level"

_PENTATONIC = (0, 2, 4, 7, 9)


@dataclass(frozen=True)
class CorpusSpec:
    seed: int = 0
    n_songs: int = 10
    song_duration_s: float = 240.0
    clips_per_song: tuple[int, int] = (5, 9)
    crop_length_s: tuple[float, float] = (20.0, 60.0)
    snr_db: tuple[float, float] = (5.0, 25.0)
    reference_snr_db: float = 40.0
    reference_margin_s: float = 5.0
    min_overlap_s: float = 10.0
    gain: tuple[float, float] = (0.5, 1.0)
    sample_rate: int = ANALYSIS_RATE
    # crop starts snap to this many samples; 256 = one analysis hop, 1 = any sample
    start_quantum_samples: int = 256

    def __post_init__(self) -> None:
        for name in ("clips_per_song", "crop_length_s", "snr_db", "gain"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty range {lo}..{hi}")
        if self.clips_per_song[0] < 2:
            raise ValueError("need at least a reference and one user clip per song")
        if self.crop_length_s[0] < self.min_overlap_s:
            raise ValueError("shortest crop must cover min_overlap_s")
        if 2 * self.crop_length_s[1] - self.min_overlap_s > self.song_duration_s:
            raise ValueError("song too short for the requested crop lengths")
        if self.reference_snr_db < 40:
            raise ValueError("reference clips must be effectively clean (>= 40 dB)")
        if self.song_duration_s < 30:
            raise ValueError("songs must last at least 30 s")
        if self.start_quantum_samples < 1:
            raise ValueError("start_quantum_samples must be >= 1")


def _voice(
    rng: np.random.Generator,
    pitches: list[float],
    n: int,
    rate: int,
    note_s: tuple[float, float],
    stretch: float,
    tau_s: tuple[float, float] = (0.3, 0.8),
    ring_s: float = 0.4,
) -> np.ndarray:
    """Random walk over ``pitches``; each note rings ``ring_s`` past its slot."""
    out = np.zeros(n)
    idx = int(rng.integers(len(pitches)))
    attack = int(0.005 * rate)
    t = 0
    while t < n:
        length = int(rng.uniform(*note_s) * rate)
        m = min(length + int(ring_s * rate), n - t)
        f0 = pitches[idx]
        amps = rng.uniform(0.3, 1.0, size=4) / np.arange(1, 5)
        phases = rng.uniform(0, 2 * np.pi, size=4)
        # per-partial onset delays spread one note's peaks over several frames
        delays = rng.integers(0, int(0.06 * rate), size=4)
        tau = rng.uniform(*tau_s)
        note = np.zeros(m)
        for h, a, ph, d in zip(range(1, 5), amps, phases, delays):
            k = m - d
            if k <= 0:
                continue
            tt = np.arange(k) / rate
            env = np.exp(-tt / tau)
            env[:attack] *= np.linspace(0.0, 1.0, attack, endpoint=False)[: min(attack, k)]
            note[d:] += a * env * np.sin(2 * np.pi * f0 * h * (1 + stretch * h * h) * tt + ph)
        out[t : t + m] += rng.uniform(0.5, 1.0) * note
        t += length
        idx = int(np.clip(idx + rng.choice([-2, -1, 1, 2]), 0, len(pitches) - 1))
    return out


def _shimmer(
    rng: np.random.Generator,
    n: int,
    rate: int,
    per_s: float = 12.0,
    band_hz: tuple[float, float] = (900.0, 5000.0),
    tau_s: tuple[float, float] = (0.15, 0.5),
    amp: float = 0.5,
) -> np.ndarray:
    """Decaying sinusoidal grains at random times and log-uniform frequencies."""
    out = np.zeros(n)
    k = int(per_s * n / rate)
    starts = rng.integers(0, n, k)
    freqs = np.exp(rng.uniform(np.log(band_hz[0]), np.log(band_hz[1]), k))
    taus = rng.uniform(*tau_s, k)
    amps = rng.uniform(0.4, 1.0, k) * amp
    phases = rng.uniform(0, 2 * np.pi, k)
    for s, f, tau, a, ph in zip(starts, freqs, taus, amps, phases):
        m = min(int(5 * tau * rate), n - s)
        tt = np.arange(m) / rate
        out[s : s + m] += a * np.exp(-tt / tau) * np.sin(2 * np.pi * f * tt + ph)
    return out


def generate_song(seed: int | Sequence[int], duration_s: float, rate: int = ANALYSIS_RATE) -> AudioClip:
    """Seeded pentatonic melody over a bass line, with a high shimmer layer.

    Notes are 4 decaying harmonics lasting 0.2-0.8 s (melody) or 0.4-1.2 s
    (bass).  Root frequency and a slight partial stretch are drawn per
    song so pitch material differs between songs.  The shimmer grains fill
    the band above the melody's harmonics, where white noise would otherwise
    decide every spectral peak.  A faint broadband texture sits underneath.
    """
    if duration_s < 30:
        raise ValueError("duration must be >= 30 s")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate))
    root_hz = 80.0 * 2 ** rng.uniform(0.0, 1.9)
    stretch = rng.uniform(0.0, 0.004)
    scale = [root_hz * 2 ** (octave + d / 12) for octave in range(2) for d in _PENTATONIC]
    melody = _voice(rng, scale + [4 * root_hz], n, rate, (0.2, 0.8), stretch)
    bass = _voice(rng, [f / 2 for f in scale[:5]], n, rate, (0.4, 1.2), stretch)
    shimmer = _shimmer(rng, n, rate)
    out = melody + 0.6 * bass + shimmer + 0.002 * rng.standard_normal(n)
    out *= 0.6 / np.abs(out).max()
    return AudioClip(rate, out)


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def derive_clip(
    song: AudioClip,
    crop_start_s: float,
    crop_length_s: float,
    snr_db: float = math.inf,
    gain: float = 1.0,
    seed: int | Sequence[int] = 0,
) -> AudioClip:
    """Crop, apply gain, add white noise at ``snr_db`` relative to the crop, clamp."""
    rate = song.sample_rate
    start = int(round(crop_start_s * rate))
    length = int(round(crop_length_s * rate))
    if start < 0 or length <= 0 or start + length > song.n_samples:
        raise ValueError(
            f"crop [{crop_start_s}, {crop_start_s + crop_length_s}] s outside song of {song.duration_s} s"
        )
    x = song.mono[start : start + length] * gain
    if math.isfinite(snr_db):
        noise = np.random.default_rng(seed).standard_normal(length)
        target = rms(x) / 10 ** (snr_db / 20)
        x = x + noise * (target / rms(noise))
    return AudioClip(rate, np.clip(x, -1.0, 1.0))


@dataclass
class ClipTruth:
    clip_id: str
    song_id: str
    crop_start_s: float
    crop_length_s: float
    snr_db: float
    gain: float
    is_reference: bool


@dataclass
class Injection:
    kind: str
    query_id: str
    phantom_candidate_id: str
    offset_frames: int
    l: int


@dataclass
class Manifest:
    spec: dict
    songs: list[dict] = field(default_factory=list)
    clips: list[ClipTruth] = field(default_factory=list)
    injections: list[Injection] = field(default_factory=list)
    skipped_injections: list[dict] = field(default_factory=list)
    isolation_regenerations: int = 0
    schema_version: int = MANIFEST_VERSION

    def clip(self, clip_id: str) -> ClipTruth:
        return self._by_id()[clip_id]

    def _by_id(self) -> dict[str, ClipTruth]:
        return {c.clip_id: c for c in self.clips}

    def song_of(self) -> dict[str, str]:
        return {c.clip_id: c.song_id for c in self.clips}

    def true_offset_s(self, query_id: str, candidate_id: str) -> float:
        """``position(candidate) - position(query)`` in song time."""
        by = self._by_id()
        return by[candidate_id].crop_start_s - by[query_id].crop_start_s

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        d = json.loads(text)
        if d.get("schema_version") != MANIFEST_VERSION:
            raise ValueError(f"manifest schema_version {d.get('schema_version')} != {MANIFEST_VERSION}")
        return cls(
            spec=d["spec"],
            songs=d["songs"],
            clips=[ClipTruth(**c) for c in d["clips"]],
            injections=[Injection(**i) for i in d["injections"]],
            skipped_injections=d["skipped_injections"],
            isolation_regenerations=d["isolation_regenerations"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        return cls.from_json(Path(path).read_text())


def plan_song_clips(spec: CorpusSpec, song_idx: int) -> list[ClipTruth]:
    """Crop windows for one song: users share a common window, the reference spans them all."""
    rng = np.random.default_rng([spec.seed, song_idx, 1])
    rate = spec.sample_rate
    n_clips = int(rng.integers(spec.clips_per_song[0], spec.clips_per_song[1] + 1))
    lo_len, hi_len = spec.crop_length_s
    D, ov = spec.song_duration_s, spec.min_overlap_s
    anchor = rng.uniform(hi_len - ov, D - hi_len)
    ref_slot = int(rng.integers(n_clips))
    song_id = f"song{song_idx:02d}"

    q = spec.start_quantum_samples

    def snap(t: float) -> float:
        return round(t * rate) / rate

    def grid_start(lo: float, hi: float) -> float:
        # uniform over grid points in [lo, hi]; sample grid if the window holds none
        i_lo, i_hi = math.ceil(lo * rate / q - 1e-9), math.floor(hi * rate / q + 1e-9)
        if i_lo > i_hi:
            return snap(rng.uniform(lo, hi))
        return int(rng.integers(i_lo, i_hi + 1)) * q / rate

    users = []
    for _ in range(n_clips - 1):
        length = snap(rng.uniform(lo_len, hi_len))
        s_lo = max(0.0, anchor + ov - length)
        s_hi = min(anchor, D - length)
        start = grid_start(s_lo, s_hi)
        users.append((start, length, float(rng.uniform(*spec.snr_db)), float(rng.uniform(*spec.gain))))
    first = min(u[0] for u in users)
    # back off by whole quanta so the reference keeps the users' grid phase
    back = math.floor(min(first, spec.reference_margin_s) * rate / q + 1e-9) * q
    ref_start = (round(first * rate) - back) / rate
    ref_end = snap(min(D, max(u[0] + u[1] for u in users) + spec.reference_margin_s))
    ref = (ref_start, snap(ref_end - ref_start), spec.reference_snr_db, 1.0)
    windows = users[:ref_slot] + [ref] + users[ref_slot:]
    return [
        ClipTruth(f"{song_id}_clip{j:02d}", song_id, s, L, snr, g, j == ref_slot)
        for j, (s, L, snr, g) in enumerate(windows)
    ]


def _songs_cross_match(songs: list[AudioClip], t_l: int, fp_kwargs: dict) -> list[tuple[int, int]]:
    from .fingerprint import fingerprint_clip

    db = MatchDb()
    for k, s in enumerate(songs):
        db.insert(fingerprint_clip(s, str(k), **fp_kwargs))
    bad = set()
    for k in range(len(songs)):
        for g in db.query(db.fingerprints[str(k)], t_l):
            bad.add(tuple(sorted((k, int(g.candidate_id)))))
    return sorted(bad)


def generate_songs(
    spec: CorpusSpec, t_l: int = 5, ensure_isolation: bool = True, fp_kwargs: dict | None = None,
    max_rounds: int = 20,
) -> tuple[list[AudioClip], list[list[int]], int]:
    """Generate all songs; regenerate any song that cross-matches another at ``t_l``."""
    seeds = [[spec.seed, k, 0] for k in range(spec.n_songs)]
    songs = [generate_song(s, spec.song_duration_s, spec.sample_rate) for s in seeds]
    regenerations = 0
    if not ensure_isolation:
        return songs, seeds, 0
    for _ in range(max_rounds):
        bad = _songs_cross_match(songs, t_l, fp_kwargs or {})
        if not bad:
            return songs, seeds, regenerations
        for k in sorted({b for _, b in bad}):
            log.info("song %d cross-matches another song; regenerating", k)
            seeds[k] = [spec.seed, k, seeds[k][2] + 1]
            songs[k] = generate_song(seeds[k], spec.song_duration_s, spec.sample_rate)
            regenerations += 1
    raise RuntimeError("could not generate mutually isolated songs")


def generate_corpus(
    spec: CorpusSpec,
    out_dir: str | Path | None = None,
    t_l: int = 5,
    ensure_isolation: bool = True,
    fp_kwargs: dict | None = None,
) -> tuple[dict[str, AudioClip], Manifest]:
    songs, seeds, regens = generate_songs(spec, t_l, ensure_isolation, fp_kwargs)
    manifest = Manifest(spec=asdict(spec), isolation_regenerations=regens)
    clips: dict[str, AudioClip] = {}
    for k, song in enumerate(songs):
        manifest.songs.append({"song_id": f"song{k:02d}", "seed": seeds[k], "duration_s": spec.song_duration_s})
        for j, truth in enumerate(plan_song_clips(spec, k)):
            clips[truth.clip_id] = derive_clip(
                song, truth.crop_start_s, truth.crop_length_s, truth.snr_db, truth.gain,
                seed=[spec.seed, k, 2, j],
            )
            manifest.clips.append(truth)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for cid, clip in clips.items():
            write_wav(out / f"{cid}.wav", clip)
        manifest.save(out / "manifest.json")
    return clips, manifest


# --- false-positive injection ------------------------------------------


def _sorted_groups(groups: list[OffsetGroup], order: Mapping[str, int]) -> tuple[OffsetGroup, ...]:
    return tuple(sorted(groups, key=lambda g: (-g.l, order[g.candidate_id], g.offset_frames)))


def _min_true_p(raw: RawMatchingList, totals: Mapping[str, int]) -> float | None:
    best: dict[str, int] = {}
    for g in raw.groups:
        best[g.candidate_id] = max(best.get(g.candidate_id, 0), g.l)
    if not best:
        return None
    return min(l / totals[c] for c, l in best.items())


def _has_true_below_mean(raw: RawMatchingList, totals: Mapping[str, int], phantom_p: float) -> bool:
    best: dict[str, int] = {}
    for g in raw.groups:
        best[g.candidate_id] = max(best.get(g.candidate_id, 0), g.l)
    ps = [l / totals[c] for c, l in best.items()]
    mean = (math.fsum(ps) + phantom_p) / (len(ps) + 1)
    return any(p < mean for p in ps)


def inject_false_positives(
    raw_lists: Mapping[str, RawMatchingList],
    manifest: Manifest,
    totals: Mapping[str, int],
    order: Mapping[str, int],
    n_sample: int = 4,
    n_landmark: int = 5,
    seed: int = 0,
    t_l: int = 5,
    min_p_gap: float = 0.05,
    min_list_size: int = 2,
    t_d: float = -0.07,
    require_reachable: bool = True,
) -> dict[str, RawMatchingList]:
    """Append phantom offset groups to raw matching lists; record them in ``manifest``.

    Sample-level phantoms name a clip of another song, with ``l`` drawn from
    ``[t_l, t_l + 3]`` and ``p`` at least ``min_p_gap`` below the list's
    lowest true ``p``.  Song pairs are chosen so every phantom bridges two
    previously unbridged song groups.  Landmark-level phantoms repeat an
    existing candidate at another offset with strictly smaller ``l``.

    With ``require_reachable`` a sample-level phantom is only placed where
    the slope rule can see it: its ``p`` sits at least ``|t_d|`` under the
    lowest true ``p``, and at least one true candidate falls below the list
    mean once the phantom is added (the first below-mean entry is always
    kept).  Lists failing either test are skipped and recorded.
    """
    rng = np.random.default_rng([seed, 7])
    song_of = manifest.song_of()
    lists = {q: list(r.groups) for q, r in raw_lists.items()}
    queries = sorted(raw_lists, key=order.__getitem__)

    # union-find over songs so each phantom merges two distinct groups
    parent = {s: s for s in set(song_of.values())}

    def find(x: str) -> str:
        while parent[x] != x:
            x = parent[x]
        return x

    done = 0
    for q in [queries[i] for i in rng.permutation(len(queries))]:
        if done == n_sample:
            break
        raw = RawMatchingList(q, tuple(lists[q]))
        n_cands = len({g.candidate_id for g in raw.groups})
        min_p = _min_true_p(raw, totals)
        if min_p is None or n_cands < min_list_size:
            manifest.skipped_injections.append({"kind": SAMPLE_LEVEL, "query_id": q, "reason": "list too small"})
            continue
        l = int(rng.integers(t_l, t_l + 4))
        gap = max(min_p_gap, -t_d) if require_reachable else min_p_gap
        limit = min_p - gap - 1e-9
        pool = [
            c for c in queries
            if find(song_of[c]) != find(song_of[q]) and limit > 0 and l / totals[c] <= limit
        ]
        if not pool:
            manifest.skipped_injections.append({"kind": SAMPLE_LEVEL, "query_id": q, "reason": "p-gap not achievable"})
            continue
        c = pool[int(rng.integers(len(pool)))]
        if require_reachable and not _has_true_below_mean(raw, totals, l / totals[c]):
            manifest.skipped_injections.append(
                {"kind": SAMPLE_LEVEL, "query_id": q, "reason": "no true candidate below the list mean"}
            )
            continue
        off = int(rng.integers(-2000, 2001))
        lists[q].append(OffsetGroup(c, off, l))
        parent[find(song_of[c])] = find(song_of[q])
        manifest.injections.append(Injection(SAMPLE_LEVEL, q, c, off, l))
        done += 1

    done = 0
    used: set[tuple[str, str]] = set()
    for q in [queries[i] for i in rng.permutation(len(queries))]:
        if done == n_landmark:
            break
        true_groups = [g for g in lists[q] if song_of[g.candidate_id] == song_of[q]]
        choices = [g for g in true_groups if g.l - 1 >= t_l and (q, g.candidate_id) not in used]
        if not choices:
            manifest.skipped_injections.append({"kind": LANDMARK_LEVEL, "query_id": q, "reason": "no candidate with l > t_l"})
            continue
        g = choices[int(rng.integers(len(choices)))]
        best_l = max(x.l for x in lists[q] if x.candidate_id == g.candidate_id)
        taken = {x.offset_frames for x in lists[q] if x.candidate_id == g.candidate_id}
        off = g.offset_frames
        while off in taken:
            off = g.offset_frames + int(rng.choice([-1, 1])) * int(rng.integers(20, 400))
        l = int(rng.integers(t_l, best_l))
        lists[q].append(OffsetGroup(g.candidate_id, off, l))
        used.add((q, g.candidate_id))
        manifest.injections.append(Injection(LANDMARK_LEVEL, q, g.candidate_id, off, l))
        done += 1

    return {q: RawMatchingList(q, _sorted_groups(lists[q], order)) for q in raw_lists}
