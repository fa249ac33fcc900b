"""False-positive filtering of matching lists.

Two stages run on every query's matching list:

1. Landmark-level: a candidate listed under several offsets keeps only its
   strongest offset group.
2. Sample-level: candidates are ordered by ``p = l / t`` (``t`` being the
   candidate's total landmark count).  Everything at or above the list mean
   is kept; below it, candidates are kept until the first step
   ``p[i+1] - p[i] <= t_d``, and everything after that step is dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

from .match_db import OffsetGroup, RawMatchingList

ABOVE_AVG = "above_avg"
BELOW_AVG_BEFORE_DROP = "below_avg_before_drop"
DROP_EDGE = "drop_edge"
AFTER_DROP = "after_drop"
DEDUP_LOSER = "dedup_loser"
UNFILTERED = "unfiltered"


class MatchCandidate(NamedTuple):
    candidate_id: str
    l: int
    offset_frames: int
    p: float
    total_landmarks: int


@dataclass(frozen=True)
class MatchingList:
    query_id: str
    candidates: tuple[MatchCandidate, ...]

    @property
    def n(self) -> int:
        return len(self.candidates)

    def __len__(self) -> int:
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def ids(self) -> list[str]:
        return [c.candidate_id for c in self.candidates]


@dataclass(frozen=True)
class FilterParams:
    t_l: int = 5
    t_d: float = -0.07
    # also treat the step leaving the last above-average candidate as a drop
    strict: bool = False

    def __post_init__(self) -> None:
        if self.t_l < 1:
            raise ValueError("t_l must be >= 1")
        if not self.t_d < 0:
            raise ValueError("t_d must be negative")


class Decision(NamedTuple):
    candidate_id: str
    l: int
    total_landmarks: int
    p: float
    offset_frames: int
    accepted: bool
    reason: str


def _best_group(groups: Sequence[OffsetGroup]) -> OffsetGroup:
    return min(groups, key=lambda g: (-g.l, abs(g.offset_frames), g.offset_frames))


def dedupe_offsets(
    raw: RawMatchingList,
    totals: Mapping[str, int],
    order: Mapping[str, int] | None = None,
) -> MatchingList:
    """Keep each candidate's max-``l`` offset group and attach ``p``.

    Offset ties go to the smaller ``|offset|``, then the smaller signed
    offset.  Sorted by ``p`` descending, then ``l`` descending, then
    candidate insertion order (``order``; first appearance in ``raw`` if
    omitted).
    """
    by_cand: dict[str, list[OffsetGroup]] = {}
    for g in raw.groups:
        by_cand.setdefault(g.candidate_id, []).append(g)
    if order is None:
        order = {cid: k for k, cid in enumerate(by_cand)}
    cands = []
    for cid, groups in by_cand.items():
        best = _best_group(groups)
        t = totals[cid]
        cands.append(MatchCandidate(cid, best.l, best.offset_frames, best.l / t, t))
    cands.sort(key=lambda c: (-c.p, -c.l, order[c.candidate_id]))
    return MatchingList(raw.query_id, tuple(cands))


def percentages(ml: MatchingList) -> list[float]:
    return [c.p for c in ml.candidates]


def _mean(p: Sequence[float]) -> float:
    # shaved by a few ulps so that equal values compare >= their own mean
    return math.fsum(p) / len(p) * (1 - 1e-12)


def accepted_count(p: Sequence[float], t_d: float, strict: bool = False) -> int:
    """How many leading entries of a non-increasing ``p`` sequence survive."""
    n = len(p)
    if n == 0:
        return 0
    avg = _mean(p)
    k = sum(1 for x in p if x >= avg)
    if strict and 0 < k < n and p[k] - p[k - 1] <= t_d:
        return k
    # 1-based j from k+1: slope out of s_j is p[j] - p[j-1] in 0-based terms
    for j in range(k + 1, n):
        if p[j] - p[j - 1] <= t_d:
            return j
    return n


def filter_decisions(ml: MatchingList, params: FilterParams = FilterParams()) -> list[Decision]:
    p = percentages(ml)
    n = len(p)
    if n == 0:
        return []
    avg = _mean(p)
    m = accepted_count(p, params.t_d, params.strict)
    out = []
    for i, c in enumerate(ml.candidates):
        if i >= m:
            reason = AFTER_DROP
        elif p[i] >= avg:
            reason = ABOVE_AVG
        elif i == m - 1 and m < n:
            reason = DROP_EDGE
        else:
            reason = BELOW_AVG_BEFORE_DROP
        out.append(Decision(c.candidate_id, c.l, c.total_landmarks, c.p, c.offset_frames, i < m, reason))
    return out


def filter_matches(ml: MatchingList, params: FilterParams = FilterParams()) -> MatchingList:
    """Truncate a deduped, p-sorted list at the first steep below-average drop."""
    m = accepted_count(percentages(ml), params.t_d, params.strict)
    return MatchingList(ml.query_id, ml.candidates[:m])


def dedup_losers(raw: RawMatchingList, kept: MatchingList, totals: Mapping[str, int]) -> list[Decision]:
    """Decisions for the offset groups that lost the per-candidate dedup."""
    winners = {(c.candidate_id, c.offset_frames) for c in kept.candidates}
    out = []
    for g in raw.groups:
        if (g.candidate_id, g.offset_frames) not in winners:
            t = totals[g.candidate_id]
            out.append(Decision(g.candidate_id, g.l, t, g.l / t, g.offset_frames, False, DEDUP_LOSER))
    return out


@dataclass(frozen=True)
class FilterResult:
    accepted: dict[str, MatchingList]
    decisions: dict[str, list[Decision]]


def filter_all(
    raw_lists: Mapping[str, RawMatchingList],
    totals: Mapping[str, int],
    order: Mapping[str, int],
    params: FilterParams = FilterParams(),
    enabled: bool = True,
) -> FilterResult:
    """Dedupe then filter every query's list.

    With ``enabled=False`` nothing is removed: every raw offset group is
    passed through as its own candidate (decision reason ``unfiltered``).
    """
    accepted: dict[str, MatchingList] = {}
    decisions: dict[str, list[Decision]] = {}
    for qid in sorted(raw_lists, key=lambda s: order[s]):
        raw = raw_lists[qid]
        if not enabled:
            cands = tuple(
                MatchCandidate(g.candidate_id, g.l, g.offset_frames, g.l / totals[g.candidate_id], totals[g.candidate_id])
                for g in raw.groups
            )
            cands = tuple(sorted(cands, key=lambda c: (-c.p, -c.l, order[c.candidate_id], c.offset_frames)))
            accepted[qid] = MatchingList(qid, cands)
            decisions[qid] = [
                Decision(c.candidate_id, c.l, c.total_landmarks, c.p, c.offset_frames, True, UNFILTERED)
                for c in cands
            ]
            continue
        deduped = dedupe_offsets(raw, totals, order)
        accepted[qid] = filter_matches(deduped, params)
        decisions[qid] = filter_decisions(deduped, params) + dedup_losers(raw, deduped, totals)
    return FilterResult(accepted, decisions)


def candidate_ids(lists: Iterable[MatchingList]) -> set[tuple[str, str]]:
    return {(ml.query_id, c.candidate_id) for ml in lists for c in ml.candidates}
