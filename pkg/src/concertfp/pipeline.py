"""End-to-end stages behind the CLI: ingest, organise, evaluate.

Report files written by :func:`write_reports`:

``clusters.json``
    ``{schema_version, kind: "clusters", offset_convention, clusters: [{cluster_id,
    members: [{sample_id, timeline_position_s}], warnings}], unmatched, graph_warnings}``
``rankings.json`` / ``rankings.csv``
    per cluster, entries ``{sample_id, proposed_score, rank_proposed, proposed_tie,
    km_score, km_rank_lo, km_rank_hi, is_reference}``
``graph.csv``
    ``a, b, offset_s, l_ab`` with ``offset_s = position(b) - position(a)``
``filter_decisions.json``
    per query, candidates ``{candidate_id, l, t_i, p, offset_frames, offset_s,
    accepted, reason}``
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .audio_io import WavDecodeError, canonicalise, read_wav
from .clustering import ClusterSet, MatchGraph, Timeline, build_graph, connected_components, propagate_offsets
from .config import PipelineConfig
from .corpus_gen import LANDMARK_LEVEL, SAMPLE_LEVEL, Manifest, inject_false_positives
from .filtering import FilterResult, filter_all
from .fingerprint import Fingerprint, TooShortError, fingerprint_clip
from .match_db import MatchDb, RawMatchingList
from .quality import QualityScore, rank_cluster, score_all

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
OFFSET_CONVENTION = "position(b) - position(a), a before b in insertion order"


class ReportError(ValueError):
    pass


class InvariantError(RuntimeError):
    pass


# --- ingest ------------------------------------------------------------------


def _fingerprint_file(args: tuple[str, PipelineConfig]) -> Fingerprint | str:
    path, cfg = args
    try:
        clip = canonicalise(read_wav(path), cfg.analysis_rate)
        return fingerprint_clip(clip, Path(path).stem, **cfg.fingerprint_kwargs())
    except (OSError, WavDecodeError, TooShortError, ValueError) as e:
        return f"{Path(path).name}: {e}"


@dataclass
class IngestResult:
    db: MatchDb
    files: list[str]
    failures: list[str]


def ingest(directory: str | Path, cfg: PipelineConfig = PipelineConfig()) -> IngestResult:
    """Fingerprint every ``*.wav`` in ``directory`` (sorted by name) into a new db."""
    files = sorted(str(p) for p in Path(directory).iterdir() if p.suffix.lower() == ".wav")
    jobs = [(f, cfg) for f in files]
    if cfg.jobs > 1 and len(files) > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(_fingerprint_file, jobs))
    else:
        results = [_fingerprint_file(j) for j in jobs]
    db = MatchDb(cfg.df_max)
    failures = []
    for r in results:
        if isinstance(r, str):
            log.warning("skipping %s", r)
            failures.append(r)
        else:
            db.insert(r)
    return IngestResult(db, files, failures)


# --- organise ----------------------------------------------------------------


@dataclass
class OrganiseResult:
    config: PipelineConfig
    filter_enabled: bool
    raw: dict[str, RawMatchingList]
    filtered: FilterResult
    graph: MatchGraph
    clusters: ClusterSet
    timelines: list[Timeline]
    rankings: list[list[QualityScore]]
    references: dict[str, bool] = field(default_factory=dict)


def query_all(db: MatchDb, t_l: int, jobs: int = 1) -> dict[str, RawMatchingList]:
    ids = db.insertion_order
    db.postings(0)  # build the index before fanning out
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            lists = list(pool.map(lambda s: db.query(db.fingerprints[s], t_l), ids))
    else:
        lists = [db.query(db.fingerprints[s], t_l) for s in ids]
    return dict(zip(ids, lists))


def organise(
    db: MatchDb,
    cfg: PipelineConfig = PipelineConfig(),
    filter_enabled: bool = True,
    manifest: Manifest | None = None,
    inject: tuple[int, int] | None = None,
    inject_seed: int = 0,
    min_p_gap: float = 0.05,
    reachable: bool = True,
) -> OrganiseResult:
    """Query all, (optionally inject FPs), filter, cluster and score.

    ``inject=(n_sample, n_landmark)`` needs ``manifest``; injections are
    recorded into it in place.
    """
    raw = query_all(db, cfg.t_l, cfg.jobs)
    order = {s: k for k, s in enumerate(db.insertion_order)}
    totals = db.totals()
    if inject is not None:
        if manifest is None:
            raise ValueError("false-positive injection needs a ground-truth manifest")
        raw = inject_false_positives(
            raw, manifest, totals, order, inject[0], inject[1], inject_seed, cfg.t_l, min_p_gap,
            t_d=cfg.t_d, require_reachable=reachable,
        )
    fr = filter_all(raw, totals, order, cfg.filter_params, enabled=filter_enabled)
    graph = build_graph(fr.accepted, db.insertion_order, cfg.frame_s)
    clusters = connected_components(graph)
    timelines = [propagate_offsets(c, graph, 2 * cfg.frame_s) for c in clusters.clusters]
    proposed, km = score_all(graph)
    rankings = [rank_cluster(c, proposed, km, order) for c in clusters.clusters]
    _check_invariants(graph, clusters, proposed, km, cfg.t_l)
    refs = {c.clip_id: c.is_reference for c in manifest.clips} if manifest else {}
    return OrganiseResult(cfg, filter_enabled, raw, fr, graph, clusters, timelines, rankings, refs)


def _check_invariants(g: MatchGraph, cs: ClusterSet, proposed: Mapping[str, int], km: Mapping[str, int], t_l: int) -> None:
    seen = [v for c in cs.clusters for v in c] + list(cs.unmatched)
    if sorted(seen) != sorted(g.vertices) or len(set(seen)) != len(seen):
        raise InvariantError("clusters do not partition the vertex set")
    for v in g.vertices:
        if proposed[v] < km[v] * t_l:
            raise InvariantError(f"{v}: proposed score {proposed[v]} < {km[v]} x t_l")
    if sum(proposed.values()) != 2 * sum(e.l for e in g.edges.values()):
        raise InvariantError("proposed scores violate the handshake identity")


def _header(kind: str) -> dict:
    return {"schema_version": REPORT_SCHEMA_VERSION, "kind": kind}


def clusters_report(res: OrganiseResult) -> dict:
    out = _header("clusters")
    out["offset_convention"] = OFFSET_CONVENTION
    out["filter_enabled"] = res.filter_enabled
    out["clusters"] = [
        {
            "cluster_id": k,
            "members": [{"sample_id": s, "timeline_position_s": tl.positions[s]} for s in members],
            "warnings": list(tl.warnings),
        }
        for k, (members, tl) in enumerate(zip(res.clusters.clusters, res.timelines))
    ]
    out["unmatched"] = list(res.clusters.unmatched)
    out["graph_warnings"] = list(res.graph.warnings)
    return out


def rankings_report(res: OrganiseResult) -> dict:
    out = _header("rankings")
    out["clusters"] = [
        {
            "cluster_id": k,
            "entries": [
                {
                    "sample_id": q.sample_id,
                    "proposed_score": q.proposed_score,
                    "rank_proposed": q.rank_proposed,
                    "proposed_tie": q.proposed_tie,
                    "km_score": q.km_score,
                    "km_rank_lo": q.km_rank_lo,
                    "km_rank_hi": q.km_rank_hi,
                    "is_reference": res.references.get(q.sample_id),
                }
                for q in ranking
            ],
        }
        for k, ranking in enumerate(res.rankings)
    ]
    return out


def decisions_report(res: OrganiseResult) -> dict:
    out = _header("filter_decisions")
    out["filter_enabled"] = res.filter_enabled
    fp = res.config.filter_params
    out["params"] = {"t_l": fp.t_l, "t_d": fp.t_d, "strict": fp.strict}
    frame_s = res.config.frame_s
    out["queries"] = [
        {
            "query_id": qid,
            "candidates": [
                {
                    "candidate_id": d.candidate_id,
                    "l": d.l,
                    "t_i": d.total_landmarks,
                    "p": d.p,
                    "offset_frames": d.offset_frames,
                    "offset_s": d.offset_frames * frame_s,
                    "accepted": d.accepted,
                    "reason": d.reason,
                }
                for d in decs
            ],
        }
        for qid, decs in res.filtered.decisions.items()
    ]
    return out


def _csv(rows: list[list], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def graph_csv(g: MatchGraph) -> str:
    return _csv([[e.a, e.b, repr(e.offset_s), e.l] for e in g.sorted_edges()], ["a", "b", "offset_s", "l_ab"])


def rankings_csv(report: dict) -> str:
    keys = ["sample_id", "proposed_score", "rank_proposed", "proposed_tie", "km_score", "km_rank_lo", "km_rank_hi", "is_reference"]
    rows = [[c["cluster_id"]] + [e[k] for k in keys] for c in report["clusters"] for e in c["entries"]]
    return _csv(rows, ["cluster_id"] + keys)


def _dump(obj: dict) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def write_reports(res: OrganiseResult, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rk = rankings_report(res)
    files = {
        "clusters.json": _dump(clusters_report(res)),
        "rankings.json": _dump(rk),
        "rankings.csv": rankings_csv(rk),
        "graph.csv": graph_csv(res.graph),
        "filter_decisions.json": _dump(decisions_report(res)),
    }
    paths = {}
    for name, text in files.items():
        (out / name).write_text(text)
        paths[name] = out / name
    return paths


# --- evaluation --------------------------------------------------------------


def load_report(path: str | Path, kind: str) -> dict:
    d = json.loads(Path(path).read_text())
    if d.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ReportError(f"{path}: schema_version {d.get('schema_version')} != {REPORT_SCHEMA_VERSION}")
    if d.get("kind") != kind:
        raise ReportError(f"{path}: expected a {kind!r} report, found {d.get('kind')!r}")
    return d


def evaluate(
    clusters: dict,
    rankings: dict,
    decisions: dict,
    manifest: Manifest,
    frame_s: float = 256 / 11025,
) -> dict:
    """Compare organise reports against a ground-truth manifest."""
    song_of = manifest.song_of()
    by_id = {c.clip_id: c for c in manifest.clips}
    reported = {m["sample_id"] for c in clusters["clusters"] for m in c["members"]} | set(clusters["unmatched"])
    if reported != set(song_of):
        orphans = sorted(reported ^ set(song_of))
        raise ReportError(f"sample ids differ between reports and manifest: {orphans}")

    songs = sorted(set(song_of.values()))
    cl_members = [[m["sample_id"] for m in c["members"]] for c in clusters["clusters"]]
    majority = 0
    wrongly_merged = 0
    exact = 0
    for members in cl_members:
        counts: dict[str, int] = {}
        for s in members:
            counts[song_of[s]] = counts.get(song_of[s], 0) + 1
        majority += max(counts.values())
        wrongly_merged += len(counts) > 1
        song = max(counts, key=counts.get)
        exact += len(counts) == 1 and set(members) == {c for c, so in song_of.items() if so == song}
    n_clustered = sum(len(m) for m in cl_members)
    purity = majority / n_clustered if n_clustered else 1.0

    # injected false positives
    dec_index: dict[tuple[str, str, int], dict] = {}
    for q in decisions["queries"]:
        for c in q["candidates"]:
            dec_index[(q["query_id"], c["candidate_id"], c["offset_frames"])] = c
    injected = {(i.query_id, i.phantom_candidate_id, i.offset_frames) for i in manifest.injections}
    fp_stats = {}
    for kind in (SAMPLE_LEVEL, LANDMARK_LEVEL):
        inj = [i for i in manifest.injections if i.kind == kind]
        removed = sum(
            1 for i in inj
            if not dec_index.get((i.query_id, i.phantom_candidate_id, i.offset_frames), {"accepted": True})["accepted"]
        )
        fp_stats[kind] = {"injected": len(inj), "removed": removed, "removal_rate": removed / len(inj) if inj else None}

    # false negatives and offset errors among true same-song matches
    true_total = true_rejected = 0
    offset_errors = []
    for q in decisions["queries"]:
        qid = q["query_id"]
        for c in q["candidates"]:
            key = (qid, c["candidate_id"], c["offset_frames"])
            if key in injected or c["reason"] == "dedup_loser":
                continue
            if song_of[qid] != song_of[c["candidate_id"]]:
                continue
            true_total += 1
            true_rejected += not c["accepted"]
            if c["accepted"]:
                err = c["offset_s"] - manifest.true_offset_s(qid, c["candidate_id"])
                offset_errors.append(abs(err))
    tol = 2 * frame_s

    # true pair recall in the graph (edge present for a same-song pair)
    edges = set()
    for q in decisions["queries"]:
        for c in q["candidates"]:
            if c["accepted"]:
                edges.add(frozenset((q["query_id"], c["candidate_id"])))
    true_pairs = [
        frozenset((a, b)) for a in song_of for b in song_of if a < b and song_of[a] == song_of[b]
    ]
    pair_recall = sum(p in edges for p in true_pairs) / len(true_pairs) if true_pairs else 1.0

    # timeline positions relative to each cluster's earliest clip
    position_errors = []
    for c in clusters["clusters"]:
        members = c["members"]
        if len({song_of[m["sample_id"]] for m in members}) != 1:
            continue
        t0 = min(by_id[m["sample_id"]].crop_start_s for m in members)
        for m in members:
            position_errors.append(abs(m["timeline_position_s"] - (by_id[m["sample_id"]].crop_start_s - t0)))

    # quality ranking of the reference clip
    ref_ranks = []
    km_tie_clusters = 0
    proposed_ties = 0
    for c in rankings["clusters"]:
        entries = c["entries"]
        km_tie_clusters += any(e["km_rank_hi"] > e["km_rank_lo"] for e in entries)
        scores = [e["proposed_score"] for e in entries]
        proposed_ties += len(scores) - len(set(scores))
        for e in entries:
            if by_id[e["sample_id"]].is_reference:
                ref_ranks.append(
                    {
                        "cluster_id": c["cluster_id"],
                        "sample_id": e["sample_id"],
                        "cluster_size": len(entries),
                        "rank_proposed": e["rank_proposed"],
                        "km_rank_lo": e["km_rank_lo"],
                        "km_rank_hi": e["km_rank_hi"],
                    }
                )

    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "metrics",
        "filter_enabled": decisions.get("filter_enabled", True),
        "n_songs": len(songs),
        "n_clips": len(song_of),
        "n_clusters": len(cl_members),
        "n_unmatched": len(clusters["unmatched"]),
        "purity": purity,
        "exact_clusters": exact,
        "wrongly_merged_clusters": wrongly_merged,
        "clustering_exact": exact == len(songs) and len(cl_members) == len(songs),
        "false_positives": fp_stats,
        "true_matches": true_total,
        "true_matches_rejected": true_rejected,
        "false_negative_rate": true_rejected / true_total if true_total else 0.0,
        "pair_recall": pair_recall,
        "offset_error_max_s": max(offset_errors, default=0.0),
        "offset_error_mean_s": sum(offset_errors) / len(offset_errors) if offset_errors else 0.0,
        "offset_errors_beyond_2_frames": sum(e > tol + 1e-9 for e in offset_errors),
        "position_error_max_s": max(position_errors, default=0.0),
        "reference_ranks": ref_ranks,
        "reference_rank1_clusters": sum(r["rank_proposed"] == 1 for r in ref_ranks),
        "reference_not_worse_than_km": all(r["rank_proposed"] <= r["km_rank_lo"] for r in ref_ranks),
        "km_tie_clusters": km_tie_clusters,
        "proposed_ties": proposed_ties,
    }


def evaluate_dir(reports_dir: str | Path, manifest: Manifest, frame_s: float = 256 / 11025) -> dict:
    d = Path(reports_dir)
    return evaluate(
        load_report(d / "clusters.json", "clusters"),
        load_report(d / "rankings.json", "rankings"),
        load_report(d / "filter_decisions.json", "filter_decisions"),
        manifest,
        frame_s,
    )
