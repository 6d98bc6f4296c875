"""Batch figure rendering for finished runs.

Usage: plots <run_dir>... [--figure curves|motion|reward|correlation|all]
       [--out DIR] plus per-figure selectors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import figures
from .frames import load_runs

FIGURES = ("curves", "motion", "reward", "correlation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plots", description=__doc__)
    parser.add_argument("run_dirs", nargs="+", help="run directories (<name>-s<seed>)")
    parser.add_argument("--figure", choices=FIGURES + ("all",), default="all")
    parser.add_argument("--out", default="figures")
    parser.add_argument("--metric", default="avg_steps", help="column for the curves figure")
    parser.add_argument("--episode", type=int, default=0)
    parser.add_argument("--step", type=int, default=0)
    parser.add_argument("--agent", type=int, default=0)
    parser.add_argument("--head", choices=("motion", "reward"), default="motion",
                        help="auxiliary head for the correlation figure")
    parser.add_argument("--ground-truth", action="store_true",
                        help="render target rows instead of predictions (motion figure)")
    return parser


def _find_snapshot(run_dirs: list[Path]) -> Path:
    for run_dir in run_dirs:
        candidate = run_dir / "beliefs.jsonl"
        if candidate.exists():
            return candidate
    raise FileNotFoundError(
        f"no beliefs.jsonl in {[str(d) for d in run_dirs]}; export snapshots first"
    )


def _find_correlation_report(run_dirs: list[Path]) -> dict | None:
    for run_dir in run_dirs:
        candidate = run_dir / "reports" / "correlation.json"
        if candidate.exists():
            with open(candidate, encoding="utf-8") as fh:
                return json.load(fh)
    return None


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    run_dirs = [Path(d) for d in args.run_dirs]
    out_dir = Path(args.out)
    wanted = FIGURES if args.figure == "all" else (args.figure,)
    written: list[Path] = []
    try:
        for figure in wanted:
            if figure == "curves":
                frame = load_runs(run_dirs)
                path = out_dir / f"curves_{args.metric}.png"
                figures.plot_learning_curves(frame, args.metric, path)
            elif figure == "motion":
                path = out_dir / (
                    f"motion_e{args.episode}_t{args.step}_a{args.agent}"
                    f"{'_truth' if args.ground_truth else ''}.png"
                )
                figures.plot_motion_beliefs(
                    _find_snapshot(run_dirs), path, episode=args.episode,
                    step=args.step, agent=args.agent, ground_truth=args.ground_truth,
                )
            elif figure == "reward":
                path = out_dir / f"reward_e{args.episode}_a{args.agent}.png"
                figures.plot_reward_beliefs(
                    _find_snapshot(run_dirs), path, episode=args.episode, agent=args.agent
                )
            else:
                frame = load_runs(run_dirs)
                path = out_dir / f"correlation_{args.head}.png"
                figures.plot_correlation(
                    frame, path, head=args.head, report=_find_correlation_report(run_dirs)
                )
            written.append(path)
    except (FileNotFoundError, KeyError, IndexError, ValueError) as err:
        raise SystemExit(f"error: {err}")
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
