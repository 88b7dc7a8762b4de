import argparse
import json
import logging
import sys

from molecular_sync.experiments import emit_report, load_config, precompute, render_report, run_experiment, \
    theory_report
from molecular_sync.version import __version__


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="molecular-sync",
                                     description="Timing-offset estimation experiments for molecular links")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="run the Monte Carlo experiment and emit its report")
    simulate.add_argument("config")
    simulate.add_argument("--out", help="report file, stdout when omitted")
    simulate.add_argument("--format", choices=["csv", "json"], default="csv")
    simulate.add_argument("--seed", type=int)
    simulate.add_argument("--trials", type=int)
    simulate.add_argument("--workers", type=int)

    prepare = commands.add_parser("precompute", help="build and cache arrival statistics and weights")
    prepare.add_argument("config")
    prepare.add_argument("--workers", type=int)

    theory = commands.add_parser("theory", help="emit closed-form curves only")
    theory.add_argument("config")
    theory.add_argument("--out")
    theory.add_argument("--format", choices=["csv", "json"], default="csv")
    return parser


def _write(report, args) -> None:
    if args.out:
        emit_report(report, args.format, args.out)
    else:
        sys.stdout.write(render_report(report, args.format))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr)
    overrides = {"seed": getattr(args, "seed", None), "trials": getattr(args, "trials", None),
                 "workers": getattr(args, "workers", None)}
    try:
        config = load_config(args.config, overrides)
        if args.command == "simulate":
            _write(run_experiment(config), args)
        elif args.command == "precompute":
            prepared = precompute(config)
            logging.info(json.dumps({"method": "main", "action": "precomputed", "name": config.name,
                                     "sweep_values": prepared}))
        else:
            _write(theory_report(config), args)
    except Exception as error:
        sys.stderr.write(json.dumps({"error": type(error).__name__,
                                     "message": getattr(error, "message", str(error))}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
