"""In-memory inverted index of landmark hashes with offset-consistent matching."""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .fingerprint import (
    Fingerprint,
    FingerprintFormatError,
    StftParams,
    read_fingerprint_record,
    write_fingerprint_record,
)

DB_MAGIC = b"CLDB"
DB_VERSION = 1
DEFAULT_T_L = 5


class DuplicateSampleError(KeyError):
    pass


class OffsetGroup(NamedTuple):
    candidate_id: str
    offset_frames: int
    l: int


@dataclass(frozen=True)
class RawMatchingList:
    query_id: str
    groups: tuple[OffsetGroup, ...]

    def __len__(self) -> int:
        return len(self.groups)

    def __iter__(self) -> Iterator[OffsetGroup]:
        return iter(self.groups)


def offset_seconds(
    g: OffsetGroup | int, params: StftParams = StftParams(), rate: int = 11025
) -> float:
    frames = g.offset_frames if isinstance(g, OffsetGroup) else int(g)
    return frames * params.hop_size / rate


def unique_entries(fp: Fingerprint, df_max: int = 31) -> tuple[np.ndarray, np.ndarray]:
    """Distinct ``(hash, t1)`` pairs of a fingerprint, sorted by hash then t1."""
    if fp.total_landmarks == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    pairs = np.unique(np.stack([fp.hashes(df_max), fp.landmarks[:, 2]], axis=1), axis=0)
    return pairs[:, 0], pairs[:, 1]


class MatchDb:
    """Fingerprints plus an inverted index ``hash -> [(sample_id, t1), ...]``.

    The index is held as hash-sorted parallel arrays and rebuilt lazily after
    inserts.  Duplicate ``(hash, t1)`` landmarks within one fingerprint are
    indexed once.
    """

    def __init__(self, df_max: int = 31) -> None:
        self.df_max = df_max
        self.fingerprints: dict[str, Fingerprint] = {}
        self.insertion_order: list[str] = []
        self._order: dict[str, int] = {}
        self._entries: list[tuple[np.ndarray, np.ndarray]] = []
        self._index: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.insertion_order)

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self.fingerprints

    def order_of(self, sample_id: str) -> int:
        return self._order[sample_id]

    def totals(self) -> dict[str, int]:
        return {sid: fp.total_landmarks for sid, fp in self.fingerprints.items()}

    def insert(self, fp: Fingerprint) -> "MatchDb":
        if fp.sample_id in self.fingerprints:
            raise DuplicateSampleError(f"sample id {fp.sample_id!r} already in db")
        self.fingerprints[fp.sample_id] = fp
        self._order[fp.sample_id] = len(self.insertion_order)
        self.insertion_order.append(fp.sample_id)
        self._entries.append(unique_entries(fp, self.df_max))
        self._index = None
        return self

    @property
    def index_size(self) -> int:
        return sum(h.size for h, _ in self._entries)

    def _build(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self._index is None:
            if self._entries:
                keys = np.concatenate([h for h, _ in self._entries])
                t1 = np.concatenate([t for _, t in self._entries])
                sidx = np.concatenate(
                    [np.full(h.size, k, dtype=np.int64) for k, (h, _) in enumerate(self._entries)]
                )
            else:
                keys = t1 = sidx = np.empty(0, dtype=np.int64)
            order = np.argsort(keys, kind="stable")
            self._index = (keys[order], sidx[order], t1[order])
        return self._index

    def postings(self, key: int) -> list[tuple[str, int]]:
        keys, sidx, t1 = self._build()
        lo, hi = np.searchsorted(keys, [key, key + 1])
        return [(self.insertion_order[s], int(t)) for s, t in zip(sidx[lo:hi], t1[lo:hi])]

    def query(self, fp: Fingerprint, t_l: int = DEFAULT_T_L) -> RawMatchingList:
        """Every (candidate, offset) bucket with at least ``t_l`` matching landmarks.

        ``offset_frames = query.t1 - candidate.t1``.  Groups are ordered by
        ``l`` descending, candidate insertion order, then offset ascending.
        """
        if t_l < 1:
            raise ValueError("t_l must be >= 1")
        keys, sidx, t1 = self._build()
        qh, qt = unique_entries(fp, self.df_max)
        if keys.size == 0 or qh.size == 0:
            return RawMatchingList(fp.sample_id, ())
        lo = np.searchsorted(keys, qh, side="left")
        hi = np.searchsorted(keys, qh, side="right")
        counts = hi - lo
        total = int(counts.sum())
        if total == 0:
            return RawMatchingList(fp.sample_id, ())
        # expand every query entry into its run of postings
        q_of = np.repeat(np.arange(qh.size), counts)
        pos = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts) + lo[q_of]
        cand = sidx[pos]
        offs = qt[q_of] - t1[pos]
        self_idx = self._order.get(fp.sample_id)
        if self_idx is not None:
            keep = cand != self_idx
            cand, offs = cand[keep], offs[keep]
        if cand.size == 0:
            return RawMatchingList(fp.sample_id, ())
        pairs, l = np.unique(np.stack([cand, offs], axis=1), axis=0, return_counts=True)
        ok = l >= t_l
        pairs, l = pairs[ok], l[ok]
        order = np.lexsort((pairs[:, 1], pairs[:, 0], -l))
        groups = tuple(
            OffsetGroup(self.insertion_order[c], int(o), int(n))
            for (c, o), n in zip(pairs[order].tolist(), l[order].tolist())
        )
        return RawMatchingList(fp.sample_id, groups)

    def query_all(self, t_l: int = DEFAULT_T_L) -> dict[str, RawMatchingList]:
        """All-pairs matching: every stored sample queried against the rest."""
        return {sid: self.query(self.fingerprints[sid], t_l) for sid in self.insertion_order}

    # --- persistence ---------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(DB_MAGIC + struct.pack("<HI", DB_VERSION, len(self)))
        for sid in self.insertion_order:
            write_fingerprint_record(buf, self.fingerprints[sid])
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes, df_max: int = 31) -> "MatchDb":
        if raw[:4] != DB_MAGIC:
            raise FingerprintFormatError("bad magic, expected 'CLDB'")
        if len(raw) < 10:
            raise FingerprintFormatError("truncated db header")
        ver, n = struct.unpack_from("<HI", raw, 4)
        if ver != DB_VERSION:
            raise FingerprintFormatError(f"unsupported db version {ver}")
        buf = io.BytesIO(raw[10:])
        db = cls(df_max)
        for _ in range(n):
            db.insert(read_fingerprint_record(buf))
        if buf.read(1):
            raise FingerprintFormatError("trailing bytes after last fingerprint")
        return db

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path, df_max: int = 31) -> "MatchDb":
        return cls.from_bytes(Path(path).read_bytes(), df_max)
