"""Acceptance-style metrics over several corpus seeds.

Usage: python scripts/seed_sweep.py --seeds 0 1 2 3 --quantum 256 1 [--jobs 4]

For each (seed, crop-start quantum) pair: generate the corpus, fingerprint,
organise with filtering, with 4+5 injected false positives, and with the
injection but no filter, then print one summary row.
"""

from __future__ import annotations

import argparse
import itertools
from concurrent.futures import ProcessPoolExecutor

from concertfp.config import PipelineConfig
from concertfp.corpus_gen import CorpusSpec, Manifest, generate_corpus
from concertfp.fingerprint import fingerprint_clip
from concertfp.match_db import MatchDb
from concertfp.pipeline import clusters_report, decisions_report, evaluate, organise, rankings_report


def run(seed: int, quantum: int, reachable: bool) -> dict:
    cfg = PipelineConfig()
    clips, manifest = generate_corpus(CorpusSpec(seed=seed, start_quantum_samples=quantum))
    db = MatchDb(cfg.df_max)
    for cid in sorted(clips):
        db.insert(fingerprint_clip(clips[cid], cid, **cfg.fingerprint_kwargs()))

    def metrics(res, man):
        return evaluate(clusters_report(res), rankings_report(res), decisions_report(res), man, cfg.frame_s)

    plain = metrics(organise(db, cfg, True, manifest), manifest)
    out = {"seed": seed, "quantum": quantum, "plain": plain}
    for name, on in (("inj", True), ("inj_nofilter", False)):
        man = Manifest.from_json(manifest.to_json())
        res = organise(db, cfg, on, man, (4, 5), inject_seed=seed, reachable=reachable)
        out[name] = metrics(res, man)
    return out


def row(r: dict) -> str:
    p, i, n = r["plain"], r["inj"], r["inj_nofilter"]
    fp = i["false_positives"]
    ranks = [x["rank_proposed"] for x in p["reference_ranks"]]
    not_worse = sum(x["rank_proposed"] <= x["km_rank_lo"] for x in p["reference_ranks"])
    return (
        f"seed {r['seed']:3d} q {r['quantum']:4d} | clusters {p['n_clusters']:2d} purity {p['purity']:.3f} "
        f"FN {100 * p['false_negative_rate']:5.2f}% offs {1000 * p['offset_error_max_s']:5.1f} ms | "
        f"ref#1 {ranks.count(1):2d}/{len(ranks)} <=KMlo {not_worse:2d} ties {p['proposed_ties']} | "
        f"inj: clusters {i['n_clusters']:2d} nofilter {n['n_clusters']:2d} "
        f"FP s {fp['sample_level']['removed']}/{fp['sample_level']['injected']} "
        f"l {fp['landmark_level']['removed']}/{fp['landmark_level']['injected']}"
    )


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    ap.add_argument("--quantum", type=int, nargs="+", default=[256])
    ap.add_argument("--bare-gap", action="store_true", help="inject with the bare 0.05 p-gap rule")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    combos = list(itertools.product(args.seeds, args.quantum))
    reach = [not args.bare_gap] * len(combos)
    with ProcessPoolExecutor(args.jobs) as ex:
        for r in ex.map(run, [s for s, _ in combos], [q for _, q in combos], reach):
            print(row(r), flush=True)


if __name__ == "__main__":
    main()
