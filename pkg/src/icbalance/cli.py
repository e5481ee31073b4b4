"""Command-line experiment runner.

Subcommands mirror the pipeline stages: beamform (design only), balance
(full power balancing with certificates), sweep (SNR sweep with BER and
sum-rate), certify (contractivity report). Exit codes: 0 success, 2 bad
configuration, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import sys

from .errors import ConfigurationError, IcbalanceError
from . import experiments as ex


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="icbalance",
        description="Weighted-substream SINR balancing experiments for MIMO interference channels.",
    )
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=None,
                        help="YAML experiment spec (defaults are built in)")
    common.add_argument("--seed", type=int, default=None, help="override root seed")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory")
    common.add_argument("--realizations", type=int, default=None,
                        help="override channel realization count")
    common.add_argument("--async-schedule", action="store_true",
                        help="update users one at a time in seed-permuted order")
    common.add_argument("--delta-min-mode", choices=("weighted", "raw"), default=None,
                        help="min term of the fairness gap (default weighted)")
    common.add_argument("--scale", choices=("desk", "paper"), default=None,
                        help="desk keeps configured counts; paper uses the large ones")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("--no-plots", action="store_true", help="skip figure rendering")

    pb = sub.add_parser("beamform", parents=[common],
                        help="generate channels, design beamformers, report SINRs")
    pb.add_argument("--no-artifacts", action="store_true",
                    help="skip per-realization channel/beamformer JSON files")

    pl = sub.add_parser("balance", parents=[common],
                        help="run the full balancing loop with certificates")
    pl.add_argument("--artifacts", metavar="DIR", default=None,
                    help="reuse serialized channels/beamformers instead of generating")
    pl.add_argument("--outer-limit", type=int, default=50, help="outer iteration cap")

    sub.add_parser("sweep", parents=[common],
                   help="SNR sweep: SINR, sum-rate, and BER with/without balancing")

    pc = sub.add_parser("certify", parents=[common],
                        help="contractivity certificates at the first-iteration targets")
    pc.add_argument("--artifacts", metavar="DIR", default=None,
                    help="certify serialized artifacts (targets_r*.json honored)")
    pc.add_argument("--target-scale", type=float, default=1.0,
                    help="multiply targets before certifying")
    return p


def _load_spec(args) -> ex.ExperimentSpec:
    spec = ex.spec_from_yaml(args.config) if args.config else ex.default_spec(args.command)
    return ex.apply_overrides(
        spec,
        seed=args.seed,
        realizations=args.realizations,
        async_schedule=args.async_schedule,
        delta_min_mode=args.delta_min_mode,
        scale=args.scale,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = _load_spec(args)
        plots = not args.no_plots
        if args.command == "beamform":
            out = ex.run_beamform(spec, args.out, workers=args.workers,
                                  write_artifacts=not args.no_artifacts,
                                  make_plots=plots)
        elif args.command == "balance":
            out = ex.run_balance(spec, args.out, workers=args.workers,
                                 make_plots=plots, outer_limit=args.outer_limit,
                                 artifacts_dir=args.artifacts)
        elif args.command == "sweep":
            out = ex.run_sweep(spec, args.out, workers=args.workers, make_plots=plots)
        elif args.command == "certify":
            out = ex.run_certify(spec, args.out, workers=args.workers,
                                 target_scale=args.target_scale,
                                 artifacts_dir=args.artifacts, make_plots=plots)
        else:  # pragma: no cover - argparse enforces the choices
            raise ConfigurationError(f"unknown command {args.command!r}")
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        if args.config and str(args.config) in str(exc):
            print(f"configuration error: {exc}", file=sys.stderr)
            return 2
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except IcbalanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for key, path in sorted(out["paths"].items()):
        print(f"{key}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
