"""Relative quality scores within clusters.

``proposed`` sums the matching-landmark evidence over a clip's accepted
matches; ``km`` is the neighbour-count baseline (vertex degree).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .clustering import MatchGraph


@dataclass(frozen=True)
class QualityScore:
    sample_id: str
    proposed_score: int
    km_score: int
    rank_proposed: int
    km_rank_lo: int
    km_rank_hi: int
    proposed_tie: bool

    @property
    def rank_km(self) -> tuple[int, int]:
        return (self.km_rank_lo, self.km_rank_hi)


def score_proposed(sample_id: str, g: MatchGraph) -> int:
    return sum(g.edge(sample_id, v).l for v in g.neighbors(sample_id))


def score_km(sample_id: str, g: MatchGraph) -> int:
    return g.degree(sample_id)


def tie_range(score: int, scores: Sequence[int]) -> tuple[int, int]:
    """1-based ``[lo, hi]`` span shared by every member holding ``score``."""
    above = sum(1 for s in scores if s > score)
    same = sum(1 for s in scores if s == score)
    return above + 1, above + same


def rank_cluster(
    members: Sequence[str],
    proposed: Mapping[str, int],
    km: Mapping[str, int],
    order: Mapping[str, int],
) -> list[QualityScore]:
    """Members ordered by proposed score (descending, insertion order on ties)."""
    ranked = sorted(members, key=lambda s: (-proposed[s], order[s]))
    p_scores = [proposed[s] for s in members]
    k_scores = [km[s] for s in members]
    out = []
    for pos, s in enumerate(ranked, start=1):
        lo, hi = tie_range(km[s], k_scores)
        out.append(
            QualityScore(
                sample_id=s,
                proposed_score=proposed[s],
                km_score=km[s],
                rank_proposed=pos,
                km_rank_lo=lo,
                km_rank_hi=hi,
                proposed_tie=p_scores.count(proposed[s]) > 1,
            )
        )
    return out


def score_all(g: MatchGraph) -> tuple[dict[str, int], dict[str, int]]:
    proposed = {v: score_proposed(v, g) for v in g.vertices}
    km = {v: score_km(v, g) for v in g.vertices}
    return proposed, km
