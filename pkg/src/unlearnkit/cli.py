"""Command-line entry point: train, unlearn, evaluate, bench, and plot subcommands."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, parse_config, read_raw_config
from .errors import UnlearnkitError


def _add_common(parser: argparse.ArgumentParser, config_required: bool = True) -> None:
    parser.add_argument("--config", required=config_required, help="experiment config (YAML/JSON)")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="base seed override")
    parser.add_argument("--repeats", type=int, default=None, help="repeat count override")
    parser.add_argument("--method", default=None, help="run only this method name/label")
    parser.add_argument("--forget-classes", default=None,
                        help="comma-separated class indices, e.g. 0 or 1,4")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unlearnkit",
        description="Retain-free class-level unlearning benchmark toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
        ("train", "train and cache the original model for each repeat seed"),
        ("unlearn", "run unlearning methods and save edited checkpoints"),
        ("evaluate", "evaluate existing checkpoints into reports and a table"),
        ("bench", "full pipeline: train, unlearn, evaluate, aggregate, plot"),
    ):
        _add_common(sub.add_parser(name, help=desc))
    plot = sub.add_parser("plot", help="render figures from a finished run")
    plot.add_argument("--out", required=True, help="run directory containing manifest.json")
    return parser


def _load_config(args) -> ExperimentConfig:
    raw = read_raw_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.repeats is not None:
        raw["repeats"] = args.repeats
    if args.out is not None:
        raw["output_dir"] = args.out
    if args.forget_classes is not None:
        raw["forget_classes"] = [int(tok) for tok in args.forget_classes.split(",") if tok]
    return parse_config(raw)


def _print_aggregate(path: Path) -> None:
    if not path.exists():
        return
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    for row in rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    stage = args.command
    try:
        if stage == "plot":
            from .plots import emit_plots

            manifest = Path(args.out) / "manifest.json"
            if not manifest.exists():
                raise UnlearnkitError(f"no manifest.json in {args.out}; run bench first")
            written = emit_plots(manifest)
            for p in written:
                print(p)
            return 0

        cfg = _load_config(args)
        from .harness import run_experiment, train_originals

        if stage == "train":
            for path in train_originals(cfg, args.out):
                print(path)
            return 0

        manifest = run_experiment(
            cfg, args.out, method_filter=args.method,
            do_unlearn=stage in ("unlearn", "bench"),
            do_evaluate=stage in ("evaluate", "bench"))
        failures = [r for r in manifest.runs if r.get("status") == "error"]
        for entry in failures:
            print(f"[{entry.get('stage', stage)}] seed {entry['seed']} "
                  f"{entry.get('method', '')}: {entry['error']}", file=sys.stderr)
        if stage in ("evaluate", "bench") and manifest.aggregate_path:
            _print_aggregate(Path(manifest.aggregate_path))
        if stage == "bench":
            from .plots import emit_plots

            for p in emit_plots(manifest):
                print(p)
        out_dir = Path(manifest.config_path).parent
        print(f"manifest: {out_dir / 'manifest.json'}")
        return 1 if failures else 0
    except UnlearnkitError as exc:
        print(f"[{stage}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"[{stage}] unexpected {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
