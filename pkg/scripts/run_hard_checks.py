"""Run every subcommand that carries hard checks at its default (acceptance) scale.

    python3 scripts/run_hard_checks.py --seed 1 --out results
"""
from __future__ import annotations

import argparse
import sys
import time

from rangecap import cli

HARD = ("green", "cap", "decomp-audit", "gamma")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, required=True)
    ap.add_argument("--out", default="results")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    failed = []
    for name in HARD:
        t0 = time.perf_counter()
        code = cli.main([name, "--seed", str(args.seed), "--out", f"{args.out}/{name}", "--workers", str(args.workers)])
        print(f"== {name}: exit {code} after {time.perf_counter() - t0:.0f} s\n")
        if code:
            failed.append(name)
    print("all hard checks pass" if not failed else f"hard failures in: {', '.join(failed)}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
