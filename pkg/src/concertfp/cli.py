"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .audio_io import WavDecodeError, canonicalise, read_wav
from .config import CONFIG_ENV, ConfigError, load_config
from .corpus_gen import CorpusSpec, Manifest, generate_corpus
from .fingerprint import FingerprintFormatError, fingerprint_clip, fingerprint_to_bytes, fingerprint_to_json
from .match_db import MatchDb
from .pipeline import InvariantError, ReportError, evaluate_dir, ingest, organise, write_reports

log = logging.getLogger("concertfp")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2


class InputError(Exception):
    pass


def _range(text: str, cast=float) -> tuple:
    sep = "," if "," in text else "-" if "-" in text.lstrip("-") else None
    try:
        if sep is None:
            v = cast(text)
            return (v, v)
        if sep == "-":
            lo, hi = text.lstrip("-").split("-", 1)
            lo = ("-" if text.startswith("-") else "") + lo
        else:
            lo, hi = text.split(",", 1)
        return (cast(lo), cast(hi))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a range like 5,25 or 5-9, got {text!r}") from None


def _config(args: argparse.Namespace):
    overrides = {
        "t_l": getattr(args, "t_l", None),
        "t_d": getattr(args, "t_d", None),
        "jobs": getattr(args, "jobs", None),
        "strict_filter": True if getattr(args, "strict", False) else None,
    }
    return load_config(args.config, overrides)


def cmd_gen_corpus(args: argparse.Namespace) -> int:
    cfg = _config(args)
    spec = CorpusSpec(
        seed=args.seed,
        n_songs=args.songs,
        clips_per_song=tuple(int(x) for x in args.clips_per_song),
        snr_db=args.snr_range,
        song_duration_s=args.song_duration,
        sample_rate=cfg.analysis_rate,
    )
    clips, manifest = generate_corpus(spec, args.out, cfg.t_l, fp_kwargs=cfg.fingerprint_kwargs())
    print(f"wrote {len(clips)} clips of {spec.n_songs} songs to {args.out} "
          f"({manifest.isolation_regenerations} song regenerations)")
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _config(args)
    d = Path(args.dir)
    if not d.is_dir():
        raise InputError(f"{d} is not a directory")
    res = ingest(d, cfg)
    db_path = Path(args.db or cfg.db_path)
    db_path.parent.mkdir(parents=True, exist_ok=True)
    res.db.save(db_path)
    for f in res.failures:
        print(f"skipped {f}", file=sys.stderr)
    if not res.files:
        log.warning("no WAV files in %s; wrote an empty db", d)
    n_lm = sum(fp.total_landmarks for fp in res.db.fingerprints.values())
    print(f"{len(res.db)} clips, {n_lm} landmarks -> {db_path}")
    if res.files and len(res.failures) == len(res.files):
        return EXIT_INPUT
    return EXIT_OK


def cmd_organise(args: argparse.Namespace) -> int:
    cfg = _config(args)
    db_path = Path(args.db or cfg.db_path)
    if not db_path.is_file():
        raise InputError(f"db file {db_path} not found")
    db = MatchDb.load(db_path, cfg.df_max)
    manifest = Manifest.load(args.manifest) if args.manifest else None
    inject = None
    if args.inject_sample_fp or args.inject_landmark_fp:
        if manifest is None:
            raise InputError("--inject-* needs --manifest")
        inject = (args.inject_sample_fp, args.inject_landmark_fp)
    res = organise(db, cfg, not args.no_filter, manifest, inject, args.inject_seed, args.min_p_gap)
    out = Path(args.out or cfg.out_dir)
    write_reports(res, out)
    if manifest is not None:
        manifest.save(out / "manifest.json")
    print(f"{len(res.clusters.clusters)} clusters, {len(res.clusters.unmatched)} unmatched -> {out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config(args)
    manifest = Manifest.load(args.manifest)
    metrics = evaluate_dir(args.reports, manifest, cfg.frame_s)
    text = json.dumps(metrics, indent=1, sort_keys=True) + "\n"
    out = Path(args.out) if args.out else Path(args.reports) / "metrics.json"
    out.write_text(text)
    fps = metrics["false_positives"]
    lines = [
        f"clusters            {metrics['n_clusters']} (songs {metrics['n_songs']}, exact {metrics['exact_clusters']})",
        f"purity              {metrics['purity']:.3f}",
        f"wrongly merged      {metrics['wrongly_merged_clusters']}",
        f"unmatched           {metrics['n_unmatched']}",
    ]
    for kind, st in fps.items():
        rate = "n/a" if st["removal_rate"] is None else f"{100 * st['removal_rate']:.1f}%"
        lines.append(f"FP removed ({kind:14s}) {st['removed']}/{st['injected']} ({rate})")
    lines += [
        f"false negatives     {metrics['true_matches_rejected']}/{metrics['true_matches']} "
        f"({100 * metrics['false_negative_rate']:.2f}%)",
        f"max offset error    {1000 * metrics['offset_error_max_s']:.1f} ms",
        f"reference rank 1    {metrics['reference_rank1_clusters']}/{len(metrics['reference_ranks'])} clusters",
        f"K.M. tie clusters   {metrics['km_tie_clusters']}",
        f"proposed ties       {metrics['proposed_ties']}",
    ]
    for r in metrics["reference_ranks"]:
        lines.append(
            f"  cluster {r['cluster_id']:2d} ({r['cluster_size']} clips): proposed {r['rank_proposed']}, "
            f"K.M. {r['km_rank_lo']}-{r['km_rank_hi']}"
        )
    print("\n".join(lines))
    return EXIT_OK


def cmd_dump_fingerprint(args: argparse.Namespace) -> int:
    cfg = _config(args)
    src = Path(args.source)
    if not src.is_file():
        raise InputError(f"{src} not found")
    if src.suffix.lower() == ".wav":
        fp = fingerprint_clip(canonicalise(read_wav(src), cfg.analysis_rate), args.id or src.stem, **cfg.fingerprint_kwargs())
    else:
        db = MatchDb.load(src, cfg.df_max)
        if args.id not in db:
            raise InputError(f"sample id {args.id!r} not in {src}")
        fp = db.fingerprints[args.id]
    if args.out:
        Path(args.out).write_bytes(fingerprint_to_bytes(fp))
    if args.json or not args.out:
        print(fingerprint_to_json(fp))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="concertfp", description="Organise and rank concert clips by audio fingerprint.")
    p.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"key = value config file (default ${CONFIG_ENV})")
    common.add_argument("--t-l", type=int, help="minimum matching landmarks per match (default 5)")
    common.add_argument("--t-d", type=float, help="slope threshold of the filter (default -0.07)")
    common.add_argument("--jobs", type=int, help="worker count for fingerprinting and matching")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", parents=[common], help="write a synthetic corpus with manifest.json")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--songs", type=int, default=10)
    g.add_argument("--clips-per-song", type=lambda s: _range(s, int), default=(5, 9))
    g.add_argument("--snr-range", type=_range, default=(5.0, 25.0))
    g.add_argument("--song-duration", type=float, default=240.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_corpus)

    i = sub.add_parser("ingest", parents=[common], help="fingerprint a directory of WAV files")
    i.add_argument("dir")
    i.add_argument("--db")
    i.set_defaults(func=cmd_ingest)

    o = sub.add_parser("organise", parents=[common], help="match, filter, cluster and rank")
    o.add_argument("--db")
    o.add_argument("--out")
    o.add_argument("--no-filter", action="store_true", help="keep every raw match (ablation)")
    o.add_argument("--strict", action="store_true", help="also cut at a steep drop right after the mean")
    o.add_argument("--manifest", help="ground truth, for is_reference flags and FP injection")
    o.add_argument("--inject-sample-fp", type=int, default=0)
    o.add_argument("--inject-landmark-fp", type=int, default=0)
    o.add_argument("--inject-seed", type=int, default=0)
    o.add_argument("--min-p-gap", type=float, default=0.05)
    o.set_defaults(func=cmd_organise)

    e = sub.add_parser("eval", parents=[common], help="score organise reports against a manifest")
    e.add_argument("--reports", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("dump-fingerprint", parents=[common], help="fingerprint a WAV, or extract one from a db")
    d.add_argument("source")
    d.add_argument("--id")
    d.add_argument("--out", help="write the binary CLFP record here")
    d.add_argument("--json", action="store_true")
    d.set_defaults(func=cmd_dump_fingerprint)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, ConfigError, ReportError, WavDecodeError, FingerprintFormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (InvariantError, AssertionError) as e:
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
