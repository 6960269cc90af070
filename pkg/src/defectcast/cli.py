"""Command-line entry point for batch pipeline runs.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.  Diagnostics name the failing step.
"""

from __future__ import annotations

import argparse
import sys

from ._errors import ConfigError, DataError, NumericalError
from .pipeline import STAGES, load_config, render_summary, run_pipeline, run_stage


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; route them through ConfigError
    # so usage problems report exit code 1 like every other config fault
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="defectcast",
        description=(
            "Batch defect-estimation pipeline: prepare, screen, tree, fit, "
            "recalibrate, evaluate."
        ),
    )
    parser.add_argument(
        "--config", required=True, help="path to the JSON pipeline configuration"
    )
    parser.add_argument(
        "--data", help="CSV data file; overrides the config's data section"
    )
    parser.add_argument(
        "--out",
        help=(
            "output directory; overrides the DEFECTCAST_OUT environment "
            "variable and the config value"
        ),
    )
    parser.add_argument("--seed", type=int, help="master seed; overrides the config")
    parser.add_argument(
        "--stage",
        help=f"run a single stage instead of the full pipeline: {', '.join(STAGES)}",
    )
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(
            args.config,
            data_override=args.data,
            out_override=args.out,
            seed_override=args.seed,
        )
        if args.stage is not None:
            report = run_stage(args.stage, cfg)
            sections = ", ".join(
                k for k in sorted(report) if k != "provenance"
            )
            print(f"stage {args.stage!r} complete; report sections: {sections}")
        else:
            report = run_pipeline(cfg)
            print(render_summary(report), end="")
        return 0
    except ConfigError as err:
        print(f"defectcast: {err}", file=sys.stderr)
        return 1
    except DataError as err:
        print(f"defectcast: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"defectcast: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
