"""Command line entry point: ``schauderlab <experiment> --config FILE --seed S --out DIR``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 threshold
breach (only with ``--assert``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import EXPERIMENTS, ExperimentConfig
from .errors import ConfigError, InvalidArgument

EXIT_OK, EXIT_INVALID, EXIT_BREACH = 0, 2, 3

_DEFAULTS = ExperimentConfig()

# flags exposed on every subcommand: (flag, type, help)
_OVERRIDES = [
    ("instances", int, f"number of seeded instances (default {_DEFAULTS.instances})"),
    ("n", int, "dimension, 2 or 3 (default 2)"),
    ("m", int, f"nodes per axis, odd (default {_DEFAULTS.m})"),
    ("lam", float, f"ellipticity lower bound (default {_DEFAULTS.lam})"),
    ("Lam", float, f"ellipticity upper bound (default {_DEFAULTS.Lam})"),
    ("alpha", float, "Hölder exponent (default 0.5, or derived from p)"),
    ("p", float, "Hardy exponent; must equal n/(n+alpha) if both are given"),
    ("q", float, f"integrability exponent > 2 (default {_DEFAULTS.q})"),
    ("eps", float, f"sparseness parameter in (0,1) (default {_DEFAULTS.eps})"),
    ("coefficient-class", str, "constant | smooth | holder | uniform-continuous | checkerboard"),
    ("tol", float, "solver relative residual (default 1e-10)"),
    ("q-grid", str, "comma-separated exponents for the rhi scan"),
    ("m-local", int, f"nodes per axis on re-gridded subcubes (default {_DEFAULTS.m_local})"),
    ("depth", int, f"iteration depth K (default {_DEFAULTS.depth})"),
    ("budget", int, f"sampled cubes per iteration level (default {_DEFAULTS.budget})"),
    ("variant", str, "iteration variant: lq | holder (default lq)"),
    ("side", float, "initial cube side for the iterate experiment (default 1)"),
    ("bc-smooth", float, "amplitude of the smooth part of the boundary data (default 0)"),
    ("pairing-kind", str, "z | r | both (default both)"),
    ("ellipticity", str, "quadratic | spectrum (default quadratic)"),
    ("workers", int, "parallel worker processes (default 1)"),
]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="schauderlab", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="experiment", metavar="experiment")
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", help="flat TOML key/value file; flags override it")
        sp.add_argument("--seed", type=int, help="base seed (default 0)")
        sp.add_argument("--out", help="output directory (default ./out)")
        sp.add_argument("--assert", dest="do_assert", action="store_true",
                        help="exit with code 3 if any acceptance threshold is breached")
        for flag, typ, hlp in _OVERRIDES:
            sp.add_argument(f"--{flag}", type=typ, help=hlp)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors already
        return int(exc.code) if exc.code is not None else EXIT_INVALID
    if args.experiment is None:
        ap.print_help(sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import config as cfgmod

    overrides = {"experiment": args.experiment, "seed": args.seed, "output_dir": args.out}
    for flag, _typ, _h in _OVERRIDES:
        key = flag.replace("-", "_")
        overrides[key] = getattr(args, key)
    try:
        cfg = cfgmod.load(args.config, overrides, experiment=args.experiment)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_INVALID
    except InvalidArgument as exc:
        print(f"invalid argument: {exc}", file=sys.stderr)
        return EXIT_INVALID

    from .experiments import run_experiment

    report = run_experiment(cfg, cfg.output_dir)
    summary = {"experiment": cfg.experiment, "aggregate": report["aggregate"],
               "failures": report["failures"], "breaches": len(report["breaches"]),
               "out": cfg.output_dir}
    print(json.dumps(summary))
    if args.do_assert and report["breaches"]:
        for b in report["breaches"]:
            print(f"breach: {b}", file=sys.stderr)
        return EXIT_BREACH
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
