"""Run built-in benchmark suites, then aggregate and plot each one.

    python3 scripts/run_suites.py table1-mini ablation-alpha --steps 100000
    python3 scripts/run_suites.py --all

Finished runs are skipped on re-invocation, so an interrupted sweep resumes.
Results land in results/<suite>/ (report.csv, report.txt, plots/).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from dexlab import bench
from dexlab.cli import main as dexlab

REPO = Path(__file__).resolve().parents[1]


def run(suite: str, steps: int | None, jobs: int | None, grouping: str) -> int:
    out = REPO / "results" / suite
    argv = ["bench", "--suite", suite, "--out", str(out), "--grouping", grouping]
    if steps is not None:
        argv += ["--steps", str(steps)]
    if jobs is not None:
        argv += ["--jobs", str(jobs)]
    code = dexlab(argv)
    if bench.completed_runs(out):
        dexlab(["plot", str(out)])
    return code


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("suites", nargs="*", help=f"any of {', '.join(bench.BUILTIN_SUITES)}")
    p.add_argument("--all", action="store_true", help="every built-in suite")
    p.add_argument("--steps", type=int, default=None, help="override the 100k step budget")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--grouping", default="per-domain", choices=("per-task", "per-domain", "overall"))
    args = p.parse_args(argv)
    if args.all:
        args.suites = list(bench.BUILTIN_SUITES)
    if not args.suites:
        p.error("name at least one suite or pass --all")
    return args


if __name__ == "__main__":
    args = parse_args()
    codes = [run(s, args.steps, args.jobs, args.grouping) for s in args.suites]
    sys.exit(max(codes))
