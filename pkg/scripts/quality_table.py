"""Per-cluster quality ranking table from an organise reports directory.

Usage: python scripts/quality_table.py REPORTS_DIR [--manifest manifest.json]

One row per cluster: size, top clip under each score, and the reference
clip's proposed rank next to its K.M. rank range.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from concertfp.corpus_gen import Manifest
from concertfp.pipeline import load_report


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("reports")
    ap.add_argument("--manifest", help="defaults to REPORTS/manifest.json")
    args = ap.parse_args()
    rankings = load_report(Path(args.reports) / "rankings.json", "rankings")
    man = Manifest.load(args.manifest or Path(args.reports) / "manifest.json")
    refs = {c.clip_id for c in man.clips if c.is_reference}
    print(f"{'cluster':>7} {'size':>4}  {'top (proposed)':<16} {'ref':<16} {'rank':>4} {'K.M.':>7}")
    for c in rankings["clusters"]:
        entries = c["entries"]
        top = entries[0]["sample_id"]
        ref = next((e for e in entries if e["sample_id"] in refs), None)
        if ref is None:
            print(f"{c['cluster_id']:>7} {len(entries):>4}  {top:<16} {'-':<16}")
            continue
        km = f"{ref['km_rank_lo']}-{ref['km_rank_hi']}"
        tie = "*" if ref["proposed_tie"] else ""
        print(f"{c['cluster_id']:>7} {len(entries):>4}  {top:<16} {ref['sample_id']:<16} "
              f"{ref['rank_proposed']:>3}{tie:1} {km:>7}")


if __name__ == "__main__":
    main()
