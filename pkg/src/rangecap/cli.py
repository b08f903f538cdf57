"""Command-line entry point: ``rangecap <experiment> [options]``.

Every subcommand writes ``summary.json`` plus one CSV per series (or a
single ``series.json`` with ``--format json``) into ``--out``. The exit code
is 0 iff every hard check passed; soft trend flags never change it.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import experiments as ex

log = logging.getLogger("rangecap")

# per-subcommand defaults; anything not listed falls back to ExperimentConfig
DEFAULTS = {
    "green": {},
    "cap": {"samples": 20, "K": 256},
    "decomp-audit": {"samples": 100, "walks": 20, "n_values": [4096], "depth": 3},
    "lln": {"n_values": [1 << 14, 1 << 17, 1 << 20], "walks": 30, "M": 512, "K": 256, "sphere_walks": 0},
    "chi-scaling": {"n_values": [1 << 12, 1 << 14, 1 << 17], "walks": 10, "samples": 200, "K": 256},
    "clt": {"n_values": [1 << 10, 1 << 11, 1 << 12], "walks": 200, "N": 1024, "depth": 5, "trials": 400},
    "nonintersect": {"n_values": [1 << 12, 1 << 14, 1 << 16], "trials": 100_000},
    "gamma": {"N": 4096, "trials": 6000, "depth": 5, "cascade_N": 1 << 14, "cascade_trials": 400},
}

# which config field the generic --samples flag sets for each subcommand
SAMPLES_FIELD = {
    "green": None,
    "cap": "samples",
    "decomp-audit": "samples",
    "lln": "M",
    "chi-scaling": "samples",
    "clt": "trials",
    "nonintersect": "trials",
    "gamma": "trials",
}

HELP = {
    "green": "Green's function self-consistency and far-field checks",
    "cap": "exact equilibrium checks and the Monte Carlo oracle comparison (--samples sets)",
    "decomp-audit": "decomposition identity on random pairs (--samples) and dyadic splits of walks",
    "lln": "(log n / n) Cap R_n against pi^2/8 (--samples sample points per range)",
    "chi-scaling": "(log n)^2 / n chi_n(1,1) against pi^2 ln2/8 (--samples pair samples)",
    "clt": "CLT snapshot: fluctuation histograms and variance scaling (--samples limit trials)",
    "nonintersect": "log n times the non-intersection probability (--samples trials)",
    "gamma": "Brownian oracles and the gamma_G level cascade (--samples trials)",
}


def parse_int(text: str) -> int:
    """Integer literal, also accepting ``2^k`` and ``2**k``."""
    t = text.replace("**", "^")
    if "^" in t:
        base, exp = t.split("^", 1)
        return int(base) ** int(exp)
    return int(float(t)) if "e" in t.lower() else int(t)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rangecap", description="Capacity of random walk ranges on Z^4")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in ex.EXPERIMENTS:
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--seed", type=parse_int, required=True, help="master seed (mandatory)")
        p.add_argument("--n", type=parse_int, nargs="+", dest="n_values", help="walk lengths, e.g. 2^14 2^17")
        p.add_argument("--walks", type=parse_int, help="walks per n")
        p.add_argument("--samples", type=parse_int, help="sample count; meaning depends on the subcommand")
        p.add_argument("--mc-walks", type=parse_int, dest="K", help="walks per escape estimate")
        p.add_argument("--sphere-walks", type=parse_int, help="walks for the sphere estimator")
        p.add_argument("--radius-mult", type=float, help="truncation radius in units of the set radius")
        p.add_argument("--depth", type=int, help="dyadic depth p")
        p.add_argument("--grid", type=parse_int, dest="N", help="Brownian grid resolution N (power of two)")
        p.add_argument("--cascade-grid", type=parse_int, dest="cascade_N")
        p.add_argument("--cascade-paths", type=parse_int, dest="cascade_trials")
        p.add_argument("--exact-max", type=parse_int, help="largest set solved exactly instead of by Monte Carlo")
        p.add_argument("--workers", type=int)
        p.add_argument("--out", default=None, help="output directory (default results/<subcommand>)")
        p.add_argument("--format", choices=("csv", "json"), default="csv", dest="fmt", help="series format")
    return parser


def config_from_args(args: argparse.Namespace) -> ex.ExperimentConfig:
    name = args.experiment
    values = dict(DEFAULTS[name])
    for key in ("n_values", "walks", "K", "sphere_walks", "radius_mult", "depth", "N", "cascade_N",
                "cascade_trials", "exact_max", "workers"):
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    if args.samples is not None:
        field_name = SAMPLES_FIELD[name]
        if field_name is None:
            raise ValueError(f"--samples has no meaning for {name}")
        values[field_name] = args.samples
    out = args.out or f"results/{name}"
    return ex.ExperimentConfig(experiment=name, seed=args.seed, out=out, fmt=args.fmt, **values)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_from_args(args)
    except ValueError as exc:
        parser.error(str(exc))
    try:
        report = ex.run(cfg)
    except ex.ExperimentError as exc:
        exc.report.write(cfg.out, cfg.fmt)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        parser.error(str(exc))
    report.write(cfg.out, cfg.fmt)
    for c in report.checks:
        print(c.line())
    print(f"{cfg.experiment}: hard checks {'PASS' if report.hard_ok else 'FAIL'}; "
          f"wall time {report.wall_time_s:.1f} s; outputs in {cfg.out}")
    return 0 if report.hard_ok else 1


if __name__ == "__main__":
    sys.exit(main())
