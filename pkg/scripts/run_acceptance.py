"""Produce the pick-and-place results the exit criteria read, then check them.

    python3 scripts/run_acceptance.py            # 50 runs of 100k steps, then pytest
    python3 scripts/run_acceptance.py --check    # only re-run the criteria

Runs go to results/acceptance-pickplace/. Completed runs are skipped, so the
script can be interrupted and restarted.
"""

from __future__ import annotations

import argparse
import subprocess
import sys
from pathlib import Path

from dexlab.cli import main as dexlab

REPO = Path(__file__).resolve().parents[1]
OUT = REPO / "results" / "acceptance-pickplace"

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--check", action="store_true", help="skip training; only evaluate the criteria")
    p.add_argument("--jobs", type=int, default=None)
    args = p.parse_args()
    if not args.check:
        argv = ["bench", "--suite", "acceptance-pickplace", "--out", str(OUT), "--grouping", "per-task"]
        if args.jobs:
            argv += ["--jobs", str(args.jobs)]
        dexlab(argv)
        dexlab(["plot", str(OUT)])
    sys.exit(subprocess.call([sys.executable, "-m", "pytest", str(REPO / "tests" / "test_acceptance.py"), "-q"], cwd=REPO))
