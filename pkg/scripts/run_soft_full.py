"""Full-scale runs of the limit-constant experiments (hours on one core).

    python3 scripts/run_soft_full.py --seed 1 --out results [--only lln nonintersect]

Scale per experiment follows the CLI defaults: lln at n = 2^14, 2^17, 2^20 with
30 walks; chi-scaling at n = 2^12, 2^14, 2^17; nonintersect with 10^5 trials
per n; clt with 200 walks per n. Results never change the exit code beyond
runner errors, since these checks are trend flags.
"""
from __future__ import annotations

import argparse
import sys
import time

from rangecap import cli

SOFT = ("lln", "chi-scaling", "nonintersect", "clt")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, required=True)
    ap.add_argument("--out", default="results")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--only", nargs="+", choices=SOFT, default=list(SOFT))
    args = ap.parse_args()
    errors = 0
    for name in args.only:
        t0 = time.perf_counter()
        code = cli.main([name, "--seed", str(args.seed), "--out", f"{args.out}/{name}", "--workers", str(args.workers), "-v"])
        print(f"== {name}: exit {code} after {time.perf_counter() - t0:.0f} s\n")
        errors += code != 0
    return 1 if errors else 0


if __name__ == "__main__":
    sys.exit(main())
