"""Command line front-end: ``funnelfb simulate|chi-scan|verify|plot``."""
from __future__ import annotations

import argparse
import logging
import sys

from .batch import emit_plot_script, run_batch
from .config import ConfigError, load_config
from .core import FunnelFunction


def _funnel_arg(text):
    # "identity" or "expm1:RATE"
    if text == "identity":
        return FunnelFunction.identity()
    if text.startswith("expm1:"):
        try:
            return FunnelFunction.exp_minus_one(float(text.split(":", 1)[1]))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    raise argparse.ArgumentTypeError("funnel must be 'identity' or 'expm1:RATE'")


def _seed(text):
    val = int(text)
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return val


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default: config output_dir)")
    common.add_argument("--workers", type=int, default=1, help="concurrent runs (default 1)")
    common.add_argument("--tol-rel", type=float, help="override relative tolerance")
    common.add_argument("--tol-abs", type=float, help="override absolute tolerance")
    common.add_argument("--seed", type=_seed, help="default seed for noise perturbations")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="funnelfb", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("simulate", "integrate every scenario; exit 1 if any leaves the funnel"),
        ("chi-scan", "run the chi unboundedness certificates"),
        ("verify", "simulate and certify; exit 0 only if everything holds"),
    ]:
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("config", help="YAML experiment file")
    p = sub.add_parser("plot", parents=[common], help="write a gnuplot script for a trajectory CSV")
    p.add_argument("traj", help="trajectory CSV (t,x,u,w,k)")
    p.add_argument("--funnel", type=_funnel_arg, default=FunnelFunction.identity(),
                   help="'identity' (default) or 'expm1:RATE'")
    p.add_argument("--t-fail", type=float, help="mark a boundary escape at this time")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "plot":
        out = None
        if args.out:
            from pathlib import Path
            Path(args.out).mkdir(parents=True, exist_ok=True)
            out = Path(args.out) / (Path(args.traj).stem + ".gp")
        try:
            path = emit_plot_script(args.traj, args.funnel, out_path=out, t_fail=args.t_fail)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(path)
        return 0
    try:
        cfg = load_config(args.config, seed=args.seed)
        cfg = cfg.with_overrides(rel=args.tol_rel, abs=args.tol_abs)
    except (OSError, ConfigError, ValueError) as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return 2
    report = run_batch(cfg, out_dir=args.out, workers=max(1, args.workers),
                       simulate=args.command in ("simulate", "verify"),
                       chi=args.command in ("chi-scan", "verify"))
    counts = report.counts
    if report.runs:
        print("runs={runs} contained={contained} converged={converged} escaped={escaped}".format(**counts))
    for cert in report.certificates:
        print(f"certificate {cert.name}: min margin {cert.min_margin:.6g}")
    print("PASS" if report.ok else "FAIL")
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
