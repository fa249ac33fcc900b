"""Landmark fingerprints: STFT, spectral peak picking and peak pairing.

A clip becomes a set of landmarks, each a pair of spectral peaks
``(f1, f2, t1, dt)``: the two peak frequency bins, the frame of the
first peak and the frame gap to the second.  Landmarks are packed into
integer hash keys for the inverted index in :mod:`concertfp.match_db`.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio_io import AudioClip

FP_MAGIC = b"CLFP"
FP_VERSION = 1

F1_BITS = 9
DF_BITS = 6
DT_BITS = 6


class TooShortError(ValueError):
    pass


class FingerprintFormatError(ValueError):
    pass


@dataclass(frozen=True)
class StftParams:
    window_size: int = 512
    hop_size: int = 256

    def __post_init__(self) -> None:
        ws = self.window_size
        if ws < 2 or ws & (ws - 1):
            raise ValueError(f"window_size must be a power of two, got {ws}")
        if not 0 < self.hop_size <= ws:
            raise ValueError(f"need 0 < hop_size <= window_size, got {self.hop_size}")

    @property
    def n_bins(self) -> int:
        return self.window_size // 2 + 1


@dataclass(frozen=True)
class PeakParams:
    neighborhood_frames: int = 10
    neighborhood_bins: int = 15
    max_per_frame: int = 5
    floor: float = 1e-6

    def __post_init__(self) -> None:
        if self.neighborhood_frames < 1 or self.neighborhood_bins < 1:
            raise ValueError("neighborhood extents must be >= 1")
        if self.max_per_frame < 1:
            raise ValueError("max_per_frame must be >= 1")


@dataclass(frozen=True)
class PairParams:
    fan_out: int = 3
    dt_max: int = 63
    df_max: int = 31

    def __post_init__(self) -> None:
        if self.fan_out < 1:
            raise ValueError("fan_out must be >= 1")
        if not 1 <= self.dt_max < (1 << DT_BITS):
            raise ValueError(f"dt_max must lie in [1, {(1 << DT_BITS) - 1}]")
        if not 0 <= self.df_max <= ((1 << DF_BITS) - 2) // 2:
            raise ValueError(f"df_max must lie in [0, {((1 << DF_BITS) - 2) // 2}]")


@dataclass(frozen=True)
class Spectrogram:
    """``magnitudes[frame, bin]`` holds ln(1 + |X|)."""

    magnitudes: np.ndarray
    frame_duration_s: float
    bin_width_hz: float

    @property
    def n_frames(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def n_bins(self) -> int:
        return self.magnitudes.shape[1]


class Peak(NamedTuple):
    frame: int
    bin: int
    magnitude: float


class Landmark(NamedTuple):
    f1: int
    f2: int
    t1: int
    dt: int


_LANDMARK_DTYPE = np.int64


@dataclass(frozen=True, eq=False)
class Fingerprint:
    """All landmarks of one clip, stored as an ``(n, 4)`` array of f1, f2, t1, dt."""

    sample_id: str
    landmarks: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        arr = np.asarray(self.landmarks, dtype=_LANDMARK_DTYPE).reshape(-1, 4)
        arr.setflags(write=False)
        object.__setattr__(self, "landmarks", arr)

    @classmethod
    def from_landmarks(cls, sample_id: str, landmarks: Iterable[Landmark]) -> "Fingerprint":
        return cls(sample_id, np.array(list(landmarks), dtype=_LANDMARK_DTYPE).reshape(-1, 4))

    @property
    def total_landmarks(self) -> int:
        return int(self.landmarks.shape[0])

    def __len__(self) -> int:
        return self.total_landmarks

    def __iter__(self):
        for row in self.landmarks.tolist():
            yield Landmark(*row)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Fingerprint):
            return NotImplemented
        return self.sample_id == other.sample_id and np.array_equal(
            self.landmarks, other.landmarks
        )

    def hashes(self, df_max: int = 31) -> np.ndarray:
        return hash_landmarks(self.landmarks, df_max)


def compute_spectrogram(clip: AudioClip, params: StftParams = StftParams()) -> Spectrogram:
    if clip.channels != 1:
        raise ValueError("compute_spectrogram needs a mono clip; canonicalise first")
    x = clip.mono
    ws, hop = params.window_size, params.hop_size
    if x.shape[0] < ws:
        raise TooShortError(f"clip has {x.shape[0]} samples, fewer than one window ({ws})")
    frames = sliding_window_view(x, ws)[::hop]
    window = np.hanning(ws + 1)[:-1]  # periodic Hann
    mags = np.log1p(np.abs(np.fft.rfft(frames * window, axis=1)))
    return Spectrogram(mags, hop / clip.sample_rate, clip.sample_rate / ws)


def neighborhood_max_excluding_center(grid: np.ndarray, nt: int, nf: int) -> np.ndarray:
    """Max of each cell's (2nt+1)x(2nf+1) neighborhood, the cell itself excluded.

    Cells outside the grid do not participate (treated as -inf).
    """
    T, B = grid.shape
    pad = np.pad(grid.astype(np.float64), ((nt, nt), (nf, nf)), constant_values=-np.inf)
    # row-wise max over the full bin extent, for the frames above and below
    row_max = sliding_window_view(pad, 2 * nf + 1, axis=1).max(axis=-1)
    time_win = sliding_window_view(row_max, nt, axis=0).max(axis=-1)
    above = time_win[0:T]
    below = time_win[nt + 1 : nt + 1 + T]
    centre_rows = pad[nt : nt + T]
    bin_win = sliding_window_view(centre_rows, nf, axis=1).max(axis=-1)
    left = bin_win[:, 0:B]
    right = bin_win[:, nf + 1 : nf + 1 + B]
    return np.maximum(np.maximum(above, below), np.maximum(left, right))


def extract_peaks(
    spec: Spectrogram | np.ndarray,
    neighborhood: tuple[int, int] = (10, 15),
    max_per_frame: int = 5,
    floor: float = 1e-6,
) -> list[Peak]:
    """Strict local maxima over a ``(2nt+1) x (2nf+1)`` neighborhood.

    At most ``max_per_frame`` peaks survive per frame (highest magnitude
    first, smaller bin on ties).  Values ``<= floor`` are never peaks.
    Output is sorted by ``(frame, bin)``.
    """
    grid = spec.magnitudes if isinstance(spec, Spectrogram) else np.asarray(spec, dtype=np.float64)
    nt, nf = neighborhood
    if nt < 1 or nf < 1:
        raise ValueError("neighborhood extents must be >= 1")
    if grid.size == 0:
        return []
    mask = (grid > neighborhood_max_excluding_center(grid, nt, nf)) & (grid > floor)
    frames, bins = np.nonzero(mask)
    mags = grid[frames, bins]
    order = np.lexsort((bins, -mags, frames))
    frames, bins, mags = frames[order], bins[order], mags[order]
    # rank within each frame run
    starts = np.r_[0, np.flatnonzero(np.diff(frames)) + 1]
    run_start = np.repeat(starts, np.diff(np.r_[starts, frames.size]))
    keep = (np.arange(frames.size) - run_start) < max_per_frame
    frames, bins, mags = frames[keep], bins[keep], mags[keep]
    order = np.lexsort((bins, frames))
    return [
        Peak(int(f), int(b), float(m))
        for f, b, m in zip(frames[order], bins[order], mags[order])
    ]


def pair_landmarks(
    peaks: Sequence[Peak], fan_out: int = 3, dt_max: int = 63, df_max: int = 31
) -> list[Landmark]:
    """Pair each anchor with up to ``fan_out`` later peaks in its target zone.

    Target zone: ``1 <= dframe <= dt_max`` and ``|dbin| <= df_max``.  Targets
    are taken nearest-in-time first, then smaller ``|dbin|``, then smaller bin.
    """
    frames = [p.frame for p in peaks]
    out: list[Landmark] = []
    n = len(peaks)
    j0 = 0
    for i, a in enumerate(peaks):
        # first peak strictly after the anchor's frame
        if j0 <= i:
            j0 = i + 1
        while j0 < n and frames[j0] <= a.frame:
            j0 += 1
        cands = []
        j = j0
        while j < n and frames[j] - a.frame <= dt_max:
            b = peaks[j]
            dbin = b.bin - a.bin
            if -df_max <= dbin <= df_max:
                cands.append((b.frame - a.frame, abs(dbin), b.bin))
            j += 1
        cands.sort()
        for dt, _, f2 in cands[:fan_out]:
            out.append(Landmark(a.bin, f2, a.frame, dt))
    return out


def hash_landmark(lm: Landmark, df_max: int = 31) -> int:
    """Pack ``(f1, f2 - f1 + df_max, dt)`` as 9 + 6 + 6 bits."""
    f1, f2, _, dt = lm
    d = f2 - f1 + df_max
    if not 0 <= f1 < (1 << F1_BITS):
        raise ValueError(f"f1={f1} outside [0, {(1 << F1_BITS) - 1}]")
    if not 0 <= d < (1 << DF_BITS) or abs(f2 - f1) > df_max:
        raise ValueError(f"f2 - f1 = {f2 - f1} outside [-{df_max}, {df_max}]")
    if not 1 <= dt < (1 << DT_BITS):
        raise ValueError(f"dt={dt} outside [1, {(1 << DT_BITS) - 1}]")
    return (f1 << (DF_BITS + DT_BITS)) | (d << DT_BITS) | dt


def hash_landmarks(landmarks: np.ndarray, df_max: int = 31) -> np.ndarray:
    """Vectorised :func:`hash_landmark` over an ``(n, 4)`` array."""
    lm = np.asarray(landmarks, dtype=np.int64).reshape(-1, 4)
    f1, f2, dt = lm[:, 0], lm[:, 1], lm[:, 3]
    d = f2 - f1 + df_max
    bad = (
        (f1 < 0) | (f1 >= 1 << F1_BITS)
        | (np.abs(f2 - f1) > df_max) | (d < 0) | (d >= 1 << DF_BITS)
        | (dt < 1) | (dt >= 1 << DT_BITS)
    )
    if bad.any():
        raise ValueError(f"landmark {lm[np.argmax(bad)].tolist()} outside packable range")
    return (f1 << (DF_BITS + DT_BITS)) | (d << DT_BITS) | dt


def fingerprint_clip(
    clip: AudioClip,
    sample_id: str = "",
    stft: StftParams = StftParams(),
    peaks: PeakParams = PeakParams(),
    pairing: PairParams = PairParams(),
) -> Fingerprint:
    spec = compute_spectrogram(clip, stft)
    pk = extract_peaks(
        spec,
        (peaks.neighborhood_frames, peaks.neighborhood_bins),
        peaks.max_per_frame,
        peaks.floor,
    )
    lms = pair_landmarks(pk, pairing.fan_out, pairing.dt_max, pairing.df_max)
    return Fingerprint.from_landmarks(sample_id, lms)


# --- serialisation -------------------------------------------------------

_LM_RECORD = np.dtype([("f1", "<u2"), ("f2", "<u2"), ("t1", "<u4"), ("dt", "<u2")])


def write_fingerprint_record(buf: io.BufferedIOBase | io.BytesIO, fp: Fingerprint) -> None:
    sid = fp.sample_id.encode("utf-8")
    if len(sid) > 0xFFFF:
        raise FingerprintFormatError("sample id longer than 65535 bytes")
    buf.write(struct.pack("<H", len(sid)))
    buf.write(sid)
    buf.write(struct.pack("<I", fp.total_landmarks))
    rec = np.empty(fp.total_landmarks, dtype=_LM_RECORD)
    for k, name in enumerate(("f1", "f2", "t1", "dt")):
        rec[name] = fp.landmarks[:, k]
    buf.write(rec.tobytes())


def read_fingerprint_record(buf: io.BytesIO) -> Fingerprint:
    head = buf.read(2)
    if len(head) < 2:
        raise FingerprintFormatError("truncated record: sample id length")
    (n_id,) = struct.unpack("<H", head)
    sid = buf.read(n_id)
    cnt = buf.read(4)
    if len(sid) < n_id or len(cnt) < 4:
        raise FingerprintFormatError("truncated record header")
    (n,) = struct.unpack("<I", cnt)
    body = buf.read(n * _LM_RECORD.itemsize)
    if len(body) < n * _LM_RECORD.itemsize:
        raise FingerprintFormatError(f"truncated record: expected {n} landmarks")
    rec = np.frombuffer(body, dtype=_LM_RECORD)
    lms = np.stack([rec[k].astype(np.int64) for k in ("f1", "f2", "t1", "dt")], axis=1)
    return Fingerprint(sid.decode("utf-8"), lms)


def fingerprint_to_bytes(fp: Fingerprint) -> bytes:
    buf = io.BytesIO()
    buf.write(FP_MAGIC + struct.pack("<H", FP_VERSION))
    write_fingerprint_record(buf, fp)
    return buf.getvalue()


def fingerprint_from_bytes(raw: bytes) -> Fingerprint:
    if raw[:4] != FP_MAGIC:
        raise FingerprintFormatError("bad magic, expected 'CLFP'")
    (ver,) = struct.unpack_from("<H", raw, 4)
    if ver != FP_VERSION:
        raise FingerprintFormatError(f"unsupported fingerprint version {ver}")
    buf = io.BytesIO(raw[6:])
    fp = read_fingerprint_record(buf)
    if buf.read(1):
        raise FingerprintFormatError("trailing bytes after fingerprint record")
    return fp


def fingerprint_to_json(fp: Fingerprint) -> str:
    return json.dumps(
        {
            "format": "CLFP",
            "version": FP_VERSION,
            "sample_id": fp.sample_id,
            "total_landmarks": fp.total_landmarks,
            "landmarks": [dict(zip(("f1", "f2", "t1", "dt"), row)) for row in fp.landmarks.tolist()],
        },
        indent=1,
    )
