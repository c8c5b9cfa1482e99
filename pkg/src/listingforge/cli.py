"""Command-line entry point: one subcommand per pipeline stage."""

import argparse
import json
import logging
import os
import random
import sys
from pathlib import Path

import yaml

from . import __version__
from .config import ConfigError, load_config
from .crops import cost_summary, read_plans, run_crops
from .curate import MODES, run_curation
from .endpoints import EndpointError, load_endpoint
from .evaluation import load_gold, load_predictions, run_eval
from .evaluation.report import GoldSchemaError
from .ingest import IngestError, run_ingest
from .curate import VerifiedListing
from .io import file_digest, read_jsonl, tree_digests, write_json, write_jsonl
from .mixer import (ManifestError, MixConfigError, MixShortfallError, MixSpec, compose_mix,
                    load_manifest, sample_manifest_sources)
from .templates import fingerprint, load_templates

logger = logging.getLogger("listingforge")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2
RUN_MANIFEST = "run_manifest.json"

USAGE_ERRORS = (ConfigError, ManifestError, MixConfigError, MixShortfallError, GoldSchemaError,
                IngestError, EndpointError, yaml.YAMLError, json.JSONDecodeError, KeyError)


class UsageError(Exception):
    pass


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    default = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=default, help="YAML config file")
    p.add_argument("--seed", type=int, default=default)
    p.add_argument("--parallelism", type=int, default=default)
    p.add_argument("--log-level", default=default,
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"], type=str.upper)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="listingforge", parents=[_global_flags(False)],
                                     description="E-commerce vision-language data pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    g = [_global_flags(True)]

    p = sub.add_parser("ingest", parents=g, help="parse and clean raw listings")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reject-log")

    p = sub.add_parser("curate", parents=g, help="caption primary images and verify aspects")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=MODES, default="llm")
    p.add_argument("--captioner", help="endpoint config YAML or 'mock'")
    p.add_argument("--verifier", help="endpoint config YAML or 'mock'")
    p.add_argument("--images-dir")
    p.add_argument("--stats")

    p = sub.add_parser("crops", parents=g, help="square crops, pHash dedup and image budgeting")
    p.add_argument("--items", required=True)
    p.add_argument("--images-dir")
    p.add_argument("--out", required=True)
    p.add_argument("--margin", dest="margin_frac", type=float)
    p.add_argument("--gap", dest="gap_px", type=int)
    p.add_argument("--phash-threshold", type=int)
    p.add_argument("--max-images", type=int)
    p.add_argument("--tokens-per-image", type=int)
    p.add_argument("--detector", help="endpoint config YAML or 'mock'; omit to skip cropping")

    p = sub.add_parser("mix", parents=g, help="compose an instruction-tuning mix")
    p.add_argument("--manifest", help="public-source sampling manifest (YAML)")
    p.add_argument("--spec", help="mix spec YAML (total, components)")
    p.add_argument("--verified", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--total", type=int, help="override the mix spec total")

    p = sub.add_parser("eval", parents=g, help="score predictions against gold")
    p.add_argument("--task", action="append", required=True,
                   help="aspect, fashion, dae or item-intel; repeat or comma-separate")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--judge", help="endpoint config YAML or 'mock'")
    p.add_argument("--images-dir")
    p.add_argument("--report", required=True)

    p = sub.add_parser("cost", parents=g, help="visual-token cost of crop plans")
    p.add_argument("--items", required=True, help="plans.jsonl or a crops output directory")
    p.add_argument("--report")

    p = sub.add_parser("demo", parents=g, help="run every stage on generated synthetic data")
    p.add_argument("--out", required=True)
    p.add_argument("--n-listings", type=int, default=600)
    p.add_argument("--mix-total", type=int, default=1000)
    return parser


def _endpoint(cfg, role: str, flag, behavior: str, required: bool = True):
    spec = flag if flag is not None else cfg.endpoints.get(role)
    if spec is None:
        if required:
            raise UsageError(f"no {role} endpoint configured (use --{role} mock for offline runs)")
        return None
    return load_endpoint(spec, behavior, name=role)


def _check_threshold(failures: int, total: int, cfg) -> int:
    if total and failures / total > cfg.failure_threshold:
        logger.error("%d of %d records failed (threshold %.2f%%)", failures, total,
                     100 * cfg.failure_threshold)
        return EXIT_PARTIAL
    return EXIT_OK


def write_run_manifest(path, command: str, cfg, inputs, outputs) -> None:
    """Inputs and outputs are digested; directories expand to their file trees.

    Paths are recorded relative to the manifest so relocated runs compare equal.
    """
    base = Path(path).resolve().parent

    def rel(p: Path) -> str:
        return Path(os.path.relpath(p.resolve(), base)).as_posix()

    def digests(paths):
        out = {}
        for p in paths:
            if p is None:
                continue
            p = Path(p)
            if p.is_dir():
                for r, d in tree_digests(p).items():
                    if Path(r).name != RUN_MANIFEST:
                        out[f"{rel(p)}/{r}"] = d
            elif p.is_file():
                out[rel(p)] = file_digest(p)
        return out

    write_json(path, {
        "command": command,
        "seed": cfg.seed,
        "config_fingerprint": cfg.fingerprint(),
        "inputs": digests(inputs),
        "outputs": digests(outputs),
    })


def _sidecar(out) -> Path:
    return Path(f"{out}.run.json")


def cmd_ingest(args, cfg) -> int:
    result = run_ingest(args.in_path, args.out, args.reject_log, frozenset(cfg.placeholders),
                        cfg.parallelism)
    s = result.stats
    logger.info("ingest: %d read, %d kept, %d rejected", s.records_read, s.records_kept, s.records_rejected)
    write_run_manifest(_sidecar(args.out), "ingest", cfg, [args.in_path], [args.out, args.reject_log])
    return _check_threshold(s.records_rejected, s.records_read, cfg)


def cmd_curate(args, cfg) -> int:
    captioner = _endpoint(cfg, "captioner", args.captioner, "caption")
    verifier = _endpoint(cfg, "verifier", args.verifier, "verify", required=args.mode == "llm")
    templates = load_templates(cfg.template_dir)
    stats = run_curation(args.in_path, args.out, args.mode, captioner, verifier, args.images_dir,
                         templates, cfg.parallelism)
    logger.info("curate: %d in, %d out, verification rate %.3f", stats.listings_in,
                stats.listings_out, stats.verification_rate)
    if args.stats:
        write_json(args.stats, {**stats.to_dict(), "mode": args.mode, "seed": cfg.seed,
                                "templates_fingerprint": fingerprint(templates)})
    write_run_manifest(_sidecar(args.out), "curate", cfg, [args.in_path], [args.out, args.stats])
    return _check_threshold(stats.failures, stats.listings_in, cfg)


def cmd_crops(args, cfg) -> int:
    detector = _endpoint(cfg, "detector", args.detector, "detect", required=False)
    items = read_jsonl(args.items)
    plans, failures = run_crops(
        items, args.images_dir, args.out, detector,
        margin_frac=cfg.margin_frac, gap_px=cfg.gap_px, threshold=cfg.phash_threshold,
        max_images=cfg.max_images, tokens_per_image=cfg.tokens_per_image,
        templates=load_templates(cfg.template_dir), parallelism=cfg.parallelism,
    )
    if plans:
        summary = cost_summary(plans)
        logger.info("crops: %d items, token ratio %.2f", summary["n_items"], summary["token_ratio"])
    write_run_manifest(Path(args.out) / RUN_MANIFEST, "crops", cfg, [args.items, args.images_dir],
                       [args.out])
    return _check_threshold(len(failures), len(items), cfg)


def cmd_mix(args, cfg) -> int:
    spec_path = args.spec or cfg.mix_spec
    if spec_path:
        spec = MixSpec.load(spec_path, cfg.seed)
        if args.total is not None:
            spec = MixSpec(args.total, spec.components, cfg.seed)
    elif args.total is not None:
        spec = MixSpec.default(args.total, cfg.seed)
    else:
        raise UsageError("mix needs --spec or --total")

    records = [VerifiedListing.from_record(d) for d in read_jsonl(args.verified)]
    pools = {c.task: records for c in spec.components}
    templates = load_templates(cfg.template_dir)
    samples, report = compose_mix(pools, spec, templates)
    rows = [s.to_record() for s in samples]

    public_counts = []
    if args.manifest:
        entries = load_manifest(args.manifest)
        public, public_counts = sample_manifest_sources(entries, Path(args.manifest).parent, cfg.seed)
        rows.extend(public)
        random.Random(f"{cfg.seed}:public").shuffle(rows)
    report["public_sources"] = public_counts
    report["n_samples"] = len(rows)
    write_jsonl(args.out, rows)
    if args.report:
        write_json(args.report, report)
    inputs = [args.verified, spec_path, args.manifest]
    write_run_manifest(_sidecar(args.out), "mix", cfg, inputs, [args.out, args.report])
    logger.info("mix: %d samples (%d public)", len(rows), len(rows) - len(samples))
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    tasks = [t.strip() for arg in args.task for t in arg.split(",") if t.strip()]
    judge = None
    if any(t.replace("-", "_") == "item_intel" for t in tasks):
        judge = _endpoint(cfg, "judge", args.judge, "judge", required=False)
    gold = load_gold(args.gold)
    preds = load_predictions(args.pred)
    report = run_eval(tasks, gold, preds, judge, args.images_dir, load_templates(cfg.template_dir),
                      cfg.parallelism, cfg.seed)
    write_json(args.report, report)
    for w in report["warnings"]:
        logger.warning("%s", w)
    write_run_manifest(_sidecar(args.report), "eval", cfg, [args.gold, args.pred], [args.report])
    block = report["tasks"].get("item_intel")
    if block:
        return _check_threshold(block["judge_errors"], block["n_items"] + block["judge_errors"], cfg)
    return EXIT_OK


def cmd_cost(args, cfg) -> int:
    summary = cost_summary(read_plans(args.items))
    print(f"items {summary['n_items']}")
    print(f"visual tokens {summary['visual_tokens_before']} -> {summary['visual_tokens_after']}")
    b, a = summary["images_per_item_before"], summary["images_per_item_after"]
    print(f"images per item median {b['median']} -> {a['median']}, max {b['max']} -> {a['max']}")
    ratio = summary["token_ratio"]
    print("token ratio " + (f"{ratio:.2f}" if ratio is not None else "n/a"))
    if args.report:
        write_json(args.report, {**summary, "seed": cfg.seed})
        write_run_manifest(_sidecar(args.report), "cost", cfg, [args.items], [args.report])
    return EXIT_OK


def cmd_demo(args, cfg) -> int:
    from .demo import run_demo
    return run_demo(args.out, cfg, n_listings=args.n_listings, mix_total=args.mix_total,
                    config_path=getattr(args, "config", None))


COMMANDS = {
    "ingest": cmd_ingest,
    "curate": cmd_curate,
    "crops": cmd_crops,
    "mix": cmd_mix,
    "eval": cmd_eval,
    "cost": cmd_cost,
    "demo": cmd_demo,
}

_OVERRIDES = ("seed", "parallelism", "margin_frac", "gap_px", "phash_threshold", "max_images",
              "tokens_per_image")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    level = getattr(args, "log_level", None) or os.environ.get("LISTINGFORGE_LOG_LEVEL", "INFO")
    logging.basicConfig(level=level.upper(), format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k, None) for k in _OVERRIDES}
    try:
        cfg = load_config(getattr(args, "config", None), overrides=overrides)
        return COMMANDS[args.command](args, cfg)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"listingforge {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, *USAGE_ERRORS) as e:
        print(f"listingforge {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
