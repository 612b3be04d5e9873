"""Command line entry point: ``stochreg run|reproduce|check-stability``."""

from __future__ import annotations

import argparse
import sys

from ..errors import ConfigError, StochRegError
from ..model import load_model
from ..stability import non_resonance_check
from .run import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, FIGURES, reproduce, run


def _parser():
    ap = argparse.ArgumentParser(prog="stochreg",
                                 description="Hybrid output regulation of linear SDEs.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run the experiment described by a JSON config")
    r.add_argument("config")
    r.add_argument("--out", help="override the config's output directory")
    r.add_argument("--fast", action="store_true", help="down-scaled grid for unset fields")
    p = sub.add_parser("reproduce", help="run a figure preset")
    p.add_argument("figure", choices=FIGURES)
    p.add_argument("--out", help="output directory (default out/<figure>)")
    p.add_argument("--fast", action="store_true", help="delta=5e-6, T=0.5")
    p.add_argument("--workers", type=int, default=1)
    c = sub.add_parser("check-stability", help="non-resonance certificate of a model JSON")
    c.add_argument("model")
    c.add_argument("--method", default="both", choices=("both", "monte-carlo", "mean-square"))
    c.add_argument("--seeds", type=int, default=16)
    c.add_argument("--T", type=float, default=20.0)
    c.add_argument("--delta", type=float, default=1e-4)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.cmd == "run":
            code = run(args.config, out_dir=args.out, fast=args.fast)
            if code == EXIT_DIVERGED:
                print("run diverged", file=sys.stderr)
            return code
        if args.cmd == "reproduce":
            summary = reproduce(args.figure, args.out, fast=args.fast, workers=args.workers)
            for pt in summary["points"]:
                print(f"{summary['sweep_param']}={pt['value']}  rms_e={pt['mean_rms_e']}  "
                      f"rms_zx={pt['mean_rms_zx']}  divergent={pt['n_divergent']}/{pt['n_seeds']}")
            return EXIT_OK
        m, e = load_model(args.model)
        if e is None:
            raise ConfigError(f"{args.model}: model needs S and omega0")
        rep = non_resonance_check(m, e, method=args.method, seeds=range(args.seeds), T=args.T,
                                  delta=args.delta)
        print(rep.to_json(indent=1))
        return EXIT_OK
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StochRegError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
