"""Command-line driver.

Subcommands: ingest, analyze, report, simulate. Flags mirror RunConfig
keys; a --config JSON file overrides the defaults and explicit flags
override the file. When --outdir is absent the BIMETAL_OUTPUT_DIR
environment variable is honored.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import DataError, NumericalError
from .pipeline import RunConfig, load_bundle, run_analyze, run_ingest, run_report, run_simulate

OUTPUT_DIR_ENV = "BIMETAL_OUTPUT_DIR"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on usage errors; we reserve 2 for data."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _add_common(parser):
    parser.add_argument("--config", help="JSON config file (flags override it)")
    parser.add_argument("--outdir", help="output directory "
                        f"(default: ${OUTPUT_DIR_ENV} or ./out)")


def _add_ingest_opts(parser):
    parser.add_argument("--input", help="quotation table (CSV)")
    parser.add_argument("--max-gap", type=int, dest="max_gap",
                        help="longest imputable run of missing weeks")
    parser.add_argument("--hpl-kind", dest="hpl_kind",
                        choices=["difference", "ratio"])
    parser.add_argument("--no-hpl", action="store_const", const=False,
                        dest="include_hpl",
                        help="exclude the derived hpl pair from the SOM input")
    parser.add_argument("--spread-aggregation", dest="spread_aggregation",
                        choices=["mean", "tuesday", "friday", "per_day"])


def _add_analyze_opts(parser):
    parser.add_argument("--stages",
                        help="comma list among som,ms,cpd (default: all)")
    parser.add_argument("--som-rows", type=int, dest="som_rows")
    parser.add_argument("--som-cols", type=int, dest="som_cols")
    parser.add_argument("--som-epochs", type=int, dest="som_epochs")
    parser.add_argument("--som-seed", type=int, dest="som_seed")
    parser.add_argument("--classes", type=int, dest="n_classes",
                        help="number of macro-classes (default 6)")
    parser.add_argument("--ms-lag", type=int, dest="ms_lag")
    parser.add_argument("--ms-families", dest="ms_families",
                        help="comma list per regime, e.g. mlp,linear")
    parser.add_argument("--ms-hidden", type=int, dest="ms_hidden")
    parser.add_argument("--ms-tol", type=float, dest="ms_tol")
    parser.add_argument("--ms-max-iter", type=int, dest="ms_max_iter")
    parser.add_argument("--ms-restarts", type=int, dest="ms_restarts")
    parser.add_argument("--ms-seed", type=int, dest="ms_seed")
    parser.add_argument("--cpd-k-max", type=int, dest="cpd_k_max")
    parser.add_argument("--cpd-threshold", type=float, dest="cpd_threshold")
    parser.add_argument("--cpd-penalty", type=float, dest="cpd_penalty")


def build_parser() -> _Parser:
    parser = _Parser(prog="bimetal",
                     description="Regime analysis of gold-silver price spreads")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="parse, impute, and persist "
                              "features and the spread series")
    _add_common(p_ingest)
    _add_ingest_opts(p_ingest)

    p_analyze = sub.add_parser("analyze", help="run SOM periodization, "
                               "switching-model fit, and change-point detection")
    _add_common(p_analyze)
    _add_ingest_opts(p_analyze)
    _add_analyze_opts(p_analyze)

    p_report = sub.add_parser("report", help="emit class table, class means, "
                              "and the aligned plot-ready series")
    _add_common(p_report)

    p_sim = sub.add_parser("simulate", help="write a synthetic dataset plus "
                           "its ground-truth sidecar")
    _add_common(p_sim)
    p_sim.add_argument("--sim-kind", dest="sim_kind", choices=["regimes", "steps"])
    p_sim.add_argument("--sim-T", type=int, dest="sim_T")
    p_sim.add_argument("--sim-seed", type=int, dest="sim_seed")
    p_sim.add_argument("--sim-p", type=float, dest="sim_p")
    p_sim.add_argument("--sim-q", type=float, dest="sim_q")
    p_sim.add_argument("--sim-coefs", dest="sim_coefs",
                       help='JSON, e.g. "[[0.05,0.6],[0.18,0.3]]"')
    p_sim.add_argument("--sim-sigmas", dest="sim_sigmas",
                       help='JSON, e.g. "[0.02,0.08]"')
    p_sim.add_argument("--sim-tau", dest="sim_tau",
                       help='JSON, e.g. "[166,333]" (steps kind)')
    p_sim.add_argument("--sim-levels", dest="sim_levels", help="JSON list")
    p_sim.add_argument("--sim-stds", dest="sim_stds", help="JSON list")
    return parser


def _config_from_args(args) -> RunConfig:
    if getattr(args, "config", None):
        config = RunConfig.from_file(args.config)
    else:
        config = RunConfig()

    overrides = {}
    for key in (
        "input", "outdir", "max_gap", "hpl_kind", "include_hpl",
        "spread_aggregation", "som_rows", "som_cols", "som_epochs", "som_seed",
        "n_classes", "ms_lag", "ms_hidden", "ms_tol", "ms_max_iter",
        "ms_restarts", "ms_seed", "cpd_k_max", "cpd_threshold", "cpd_penalty",
        "sim_kind", "sim_T", "sim_seed", "sim_p", "sim_q",
    ):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value

    families = getattr(args, "ms_families", None)
    if families is not None:
        overrides["ms_families"] = tuple(families.split(","))
    for key in ("sim_coefs", "sim_sigmas", "sim_tau", "sim_levels", "sim_stds"):
        value = getattr(args, key, None)
        if value is not None:
            try:
                overrides[key] = json.loads(value)
            except json.JSONDecodeError as exc:
                raise _UsageError(f"--{key.replace('_', '-')}: invalid JSON ({exc})")

    stages = getattr(args, "stages", None)
    if stages is not None:
        wanted = {s.strip() for s in stages.split(",") if s.strip()}
        unknown = wanted - {"som", "ms", "cpd"}
        if unknown:
            raise _UsageError(f"unknown stages: {sorted(unknown)}")
        overrides["run_som"] = "som" in wanted
        overrides["run_ms"] = "ms" in wanted
        overrides["run_cpd"] = "cpd" in wanted

    if overrides.get("outdir") is None and os.environ.get(OUTPUT_DIR_ENV):
        overrides["outdir"] = os.environ[OUTPUT_DIR_ENV]

    return config.merged(overrides)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _config_from_args(args)

        if args.command == "ingest":
            summary = run_ingest(config)
            print(f"{summary['n_weeks']} weeks ingested "
                  f"({summary['n_imputed']} cells imputed) -> {config.outdir}")
        elif args.command == "analyze":
            bundle = run_analyze(config)
            names = ", ".join(bundle.artifact_names)
            print(f"analysis complete: {len(bundle.artifact_names)} artifacts "
                  f"in {config.outdir} ({names})")
        elif args.command == "report":
            bundle = load_bundle(config.outdir)
            paths = run_report(bundle)
            for name, path in paths.items():
                print(f"{name}: {path}")
        elif args.command == "simulate":
            summary = run_simulate(config)
            print(f"{summary['rows']} rows written to {summary['dataset']} "
                  f"(truth: {summary['truth']})")
        return EXIT_OK
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
