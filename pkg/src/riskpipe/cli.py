"""Command line entry point.

    riskpipe <stage> --config FILE [--seed N] [--out DIR]
    riskpipe run --config FILE [--stages a,b] [--force]
    riskpipe compare SIGNAL_DIR NULL_DIR [--json FILE]
    riskpipe presets

``--config`` accepts a YAML path or the name of a bundled preset. A stage
command also runs whatever upstream stages are missing or stale.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import RiskpipeError

STAGE_COMMANDS = (
    "generate",
    "ingest",
    "instances",
    "split",
    "features",
    "select",
    "train-forest",
    "train-nn",
    "evaluate",
    "report",
)

log = logging.getLogger("riskpipe")


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="YAML file or preset name")
    p.add_argument("--seed", type=int, default=None, help="override experiment.seed")
    p.add_argument("--out", default=None, help="experiment directory (default: runs/<name>-s<seed>)")
    p.add_argument("--timings", default=None, help="write per-stage wall-clock seconds to this JSON file")
    p.add_argument("--force", action="store_true", help="ignore cached stage outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskpipe", description="Accident-risk experiment pipeline.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_COMMANDS:
        _add_run_options(sub.add_parser(name, help=f"run the {name} stage (and stale upstream stages)"))
    run = sub.add_parser("run", help="run the whole stage graph")
    _add_run_options(run)
    run.add_argument("--stages", default=None, help="comma-separated target stages")
    cmp = sub.add_parser("compare", help="compare a signal and a null experiment")
    cmp.add_argument("signal_dir")
    cmp.add_argument("null_dir")
    cmp.add_argument("--json", default=None, help="also write the comparison as JSON")
    sub.add_parser("presets", help="list bundled configs")
    return parser


def _out_dir(args, cfg) -> Path:
    if args.out:
        return Path(args.out)
    return Path("runs") / f"{cfg.raw['experiment']['name']}-s{cfg.seed}"


def _run(args) -> int:
    from .config import load_config
    from .pipeline import run_pipeline

    cfg = load_config(args.config, seed=args.seed)
    if args.command == "run":
        stages = [s.strip() for s in args.stages.split(",")] if args.stages else None
    else:
        stages = [args.command]
    out = _out_dir(args, cfg)
    try:
        prov = run_pipeline(cfg, out, stages=stages, timings_path=args.timings, force=args.force)
    except KeyError as exc:
        print(f"riskpipe: {exc.args[0]}", file=sys.stderr)
        return 2
    for rec in prov["stages"]:
        t = prov["_timings"].get(rec["stage"])
        note = "" if t is None else (" cached" if t["cached"] else f" {t['seconds']:.1f}s")
        print(f"{rec['stage']:<13} {rec['output'][:12]}{note}")
    summary = out / "report" / "summary.md"
    if summary.exists() and (stages is None or "report" in stages):
        print(summary.read_text(encoding="utf-8"), end="")
    print(f"experiment directory: {out}")
    return 0


def _compare(args) -> int:
    from .pipeline import compare_markdown, compare_modes

    cmp = compare_modes(args.signal_dir, args.null_dir)
    print(compare_markdown(cmp), end="")
    if args.json:
        Path(args.json).write_text(json.dumps(cmp, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "presets":
            from .config import preset_names

            print("\n".join(preset_names()))
            return 0
        if args.command == "compare":
            return _compare(args)
        return _run(args)
    except RiskpipeError as exc:
        print(f"riskpipe: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
