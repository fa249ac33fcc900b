"""WAV decoding/encoding and canonicalisation to the analysis rate."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ANALYSIS_RATE = 11025

_FORMAT_PCM = 1
_FORMAT_FLOAT = 3
_FORMAT_EXTENSIBLE = 0xFFFE


class WavDecodeError(ValueError):
    """Malformed RIFF/WAVE data."""


class UnsupportedFormatError(WavDecodeError):
    """Well-formed WAV that uses an encoding we do not read."""


class EmptyInputError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Audio held as a ``(channels, n)`` float64 array in [-1, 1]."""

    sample_rate: int
    samples: np.ndarray

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError(f"samples must be (channels, n), got shape {arr.shape}")
        if arr.size and (not np.all(np.isfinite(arr)) or np.abs(arr).max() > 1.0):
            raise ValueError("amplitudes must be finite and lie in [-1, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate

    @property
    def mono(self) -> np.ndarray:
        """First channel; only meaningful after canonicalisation."""
        return self.samples[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AudioClip):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(
            self.samples, other.samples
        )


def _chunks(raw: bytes):
    pos = 12
    while pos + 8 <= len(raw):
        cid, size = struct.unpack_from("<4sI", raw, pos)
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise WavDecodeError(
                f"chunk {cid.decode('latin-1')!r} truncated: header says {size} bytes, "
                f"{len(body)} present"
            )
        yield cid, body
        pos += 8 + size + (size & 1)


def decode_wav(raw: bytes) -> AudioClip:
    """Decode a PCM16 or float32 RIFF/WAVE byte string."""
    if len(raw) < 12:
        raise WavDecodeError("RIFF header truncated")
    riff, _, wave = struct.unpack_from("<4sI4s", raw, 0)
    if riff != b"RIFF" or wave != b"WAVE":
        raise WavDecodeError("RIFF header: missing 'RIFF'/'WAVE' magic")

    fmt = None
    data = None
    for cid, body in _chunks(raw):
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavDecodeError(f"chunk 'fmt ' too short ({len(body)} bytes)")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == _FORMAT_EXTENSIBLE:
                if len(body) < 40:
                    raise WavDecodeError("chunk 'fmt ' extensible block truncated")
                (sub,) = struct.unpack_from("<H", body, 24)
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            data = body
            break
    if fmt is None:
        raise WavDecodeError("chunk 'fmt ' missing")
    if data is None:
        raise WavDecodeError("chunk 'data' missing")

    tag, channels, rate, _, block_align, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"{channels} channels not supported")
    if rate <= 0:
        raise WavDecodeError(f"chunk 'fmt ' has invalid sample rate {rate}")
    if tag == _FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 32768.0
    elif tag == _FORMAT_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedFormatError(f"format tag {tag} with {bits} bits per sample")
    if block_align != channels * dtype.itemsize:
        raise WavDecodeError(f"chunk 'fmt ' block_align {block_align} inconsistent")

    n = len(data) // block_align
    frames = np.frombuffer(data[: n * block_align], dtype=dtype).reshape(n, channels)
    samples = frames.T.astype(np.float64) / scale
    np.clip(samples, -1.0, 1.0, out=samples)
    return AudioClip(int(rate), samples)


def encode_wav(clip: AudioClip) -> bytes:
    """Encode as 16-bit PCM. Amplitude a maps to round(a * 32768), saturated."""
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    data = pcm.T.tobytes()
    ch = clip.channels
    fmt = struct.pack("<HHIIHH", _FORMAT_PCM, ch, clip.sample_rate, clip.sample_rate * ch * 2, ch * 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(data)) + data
    if len(data) & 1:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def read_wav(path: str | Path) -> AudioClip:
    return decode_wav(Path(path).read_bytes())


def write_wav(path: str | Path, clip: AudioClip) -> None:
    Path(path).write_bytes(encode_wav(clip))


def canonicalise(clip: AudioClip, target_rate: int = ANALYSIS_RATE) -> AudioClip:
    """Mix down to mono by channel mean and linearly resample to ``target_rate``."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if clip.n_samples == 0:
        raise EmptyInputError("cannot canonicalise an empty clip")
    if clip.channels == 1 and clip.sample_rate == target_rate:
        return clip
    mono = clip.samples.mean(axis=0) if clip.channels > 1 else clip.samples[0]
    if clip.sample_rate != target_rate:
        n_out = max(1, int(round(clip.n_samples * target_rate / clip.sample_rate)))
        src_pos = np.arange(n_out) * (clip.sample_rate / target_rate)
        mono = np.interp(src_pos, np.arange(clip.n_samples), mono)
    return AudioClip(target_rate, np.clip(mono, -1.0, 1.0))
