"""
Command-line entry point.

    rdforest dgp sample --preset lee --n 1000 --seed 7 --out d.csv
    rdforest true-effect --preset lee --at 0
    rdforest estimate --data d.csv --cutoff 0 --method rf --at 0 --trees 1000
    rdforest collapse --data d2.csv --rule rule.json --center 0,0 --out c.csv
    rdforest diagnose-density --data c.csv
    rdforest mc --config study.json --out r.csv

Exit codes: 0 success, 1 usage error, 2 data or numerical error. Errors are
printed to stderr as ``error[CODE]: message``.
"""

import argparse
import json
import logging
import sys

import pandas as pd
from joblib import cpu_count

from . import __version__
from .config import add_flags, fingerprint
from .dgp_suite import DGP_DISPLAY_NAME_MAPPINGS, DGP_PRESET_MAPPINGS, load_dgp, preset, simulate, true_effect, with_sigma
from .domain_core import UnivariateThreshold, dataset_frame, load_rule, parse_point, read_dataset_csv
from .errors import ConfigError, DimensionError, IoError, RDForestError
from .mc_harness import FORMATS, emit_table, format_table, load_study, run_mc, write_table
from .rd_estimators import estimate_at, estimate_sections, fit_rd, method_config_from_args, method_summary
from .score_transform import CollapseSpec, DEFAULT_BINS, DEFAULT_THRESHOLD, collapse, zero_density_diagnostic

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _emit(text, out=None):
    if out is None:
        sys.stdout.write(text)
        return
    try:
        with open(out, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    except OSError as e:
        raise IoError(f"cannot write {out}: {e}") from None


def _dgp(args):
    if (args.preset is None) == (args.dgp is None):
        raise ConfigError("give exactly one of --preset or --dgp")
    spec = preset(args.preset) if args.preset else load_dgp(args.dgp)
    if args.sigma is not None:
        spec = with_sigma(spec, args.sigma)
    return spec


def _rule(args, dim=1):
    if args.rule is not None:
        if args.cutoff is not None:
            raise ConfigError("give at most one of --rule or --cutoff")
        return load_rule(args.rule)
    if dim != 1:
        raise ConfigError("multivariate scores need --rule")
    return UnivariateThreshold(0.0 if args.cutoff is None else args.cutoff)


def _json(payload):
    return json.dumps(payload, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_dgp_sample(args):
    if args.n < 1:
        raise ConfigError(f"--n must be positive, got {args.n}")
    spec = _dgp(args)
    data = simulate(spec, args.n, args.seed, n_jobs=args.threads)
    _emit(dataset_frame(data).to_csv(index=False, lineterminator="\n"), args.out)
    return EXIT_OK


def cmd_true_effect(args):
    spec = _dgp(args)
    _emit(f"{true_effect(spec, parse_point(args.at)):.6g}\n")
    return EXIT_OK


def cmd_estimate(args):
    config = method_config_from_args(args)
    point = parse_point(args.at)
    rule = _rule(args, point.dim)
    data = read_dataset_csv(args.data, rule)
    report = estimate_at(fit_rd(data, rule, config), point)
    _emit(_json(report.to_dict()), args.out)
    if args.out is not None:
        print(f"{report.method}: {report.estimate:.6g} (se {report.std_error:.6g}, "
              f"{report.level:.0%} CI [{report.ci_lower:.6g}, {report.ci_upper:.6g}])")
    return EXIT_OK


def cmd_collapse(args):
    spec = CollapseSpec(parse_point(args.center), load_rule(args.rule), args.scale)
    data = read_dataset_csv(args.data, spec.rule)
    _emit(dataset_frame(collapse(data, spec)).to_csv(index=False, lineterminator="\n"), args.out)
    return EXIT_OK


def cmd_diagnose_density(args):
    try:
        frame = pd.read_csv(args.data)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IoError(f"cannot read dataset {args.data}: {e}") from None
    if "x1" not in frame.columns:
        raise ConfigError("density diagnostics need an x1 score column")
    if "x2" in frame.columns:
        raise DimensionError("density diagnostics run on univariate (collapsed) scores")
    diag = zero_density_diagnostic(frame["x1"].to_numpy(dtype=float), args.bins, args.window, args.threshold)
    _emit(_json(diag.to_dict()), args.out)
    return EXIT_OK


def cmd_mc(args):
    if args.format not in FORMATS:
        raise ConfigError(f"unknown format {args.format!r}")
    study = load_study(args.config, seed=args.seed)
    result = run_mc(study, n_jobs=args.threads, timing=args.timing)
    if args.out is not None:
        write_table(result, args.out, args.format)
    else:
        sys.stdout.write(emit_table(result, args.format).decode("utf-8"))
    print(format_table(result), file=sys.stderr if args.out is None else sys.stdout)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _common(seed_default=0):
    p = _Parser(add_help=False)
    p.add_argument("--seed", type=int, default=seed_default, help="Master seed for all randomness.")
    p.add_argument("--threads", type=int, default=None, help="Worker cap (default: logical cores). Results do not change.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _dgp_flags(p):
    presets = "; ".join(f"{key} = {name}" for key, name in DGP_DISPLAY_NAME_MAPPINGS.items())
    p.add_argument("--preset", choices=sorted(DGP_PRESET_MAPPINGS), help=f"Simulation preset: {presets}.")
    p.add_argument("--dgp", help="DGP JSON file.")
    p.add_argument("--sigma", type=float, help="Override the outcome noise level.")


def build_parser():
    parser = _Parser(prog="rdforest", description="Forest-based regression discontinuity estimation.")
    parser.add_argument("--version", action="version", version=f"rdforest {__version__} (defaults {fingerprint()})")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    dgp = sub.add_parser("dgp", help="Data-generating processes.")
    dgp_sub = dgp.add_subparsers(dest="dgp_command", required=True)
    sample = dgp_sub.add_parser("sample", parents=[common], help="Simulate a dataset as CSV.")
    _dgp_flags(sample)
    sample.add_argument("--n", type=int, required=True)
    sample.add_argument("--out")
    sample.set_defaults(func=cmd_dgp_sample)

    te = sub.add_parser("true-effect", parents=[common], help="Exact effect at a boundary point.")
    _dgp_flags(te)
    te.add_argument("--at", required=True, help="Boundary point, comma separated.")
    te.set_defaults(func=cmd_true_effect)

    est = sub.add_parser(
        "estimate", parents=[common], help="Estimate the effect at a boundary point.",
        description=f"Methods: {method_summary()}.",
    )
    est.add_argument("--data", required=True)
    est.add_argument("--rule", help="Assignment rule JSON file.")
    est.add_argument("--cutoff", type=float, help="Univariate cutoff (default 0).")
    est.add_argument("--at", required=True, help="Boundary point, comma separated.")
    est.add_argument("--out")
    for schema in estimate_sections().values():
        add_flags(est, schema)
    est.set_defaults(func=cmd_estimate)

    col = sub.add_parser("collapse", parents=[common], help="Collapse scores to signed distances.")
    col.add_argument("--data", required=True)
    col.add_argument("--rule", required=True)
    col.add_argument("--center", required=True)
    col.add_argument("--scale", type=float, default=1.0)
    col.add_argument("--out")
    col.set_defaults(func=cmd_collapse)

    dd = sub.add_parser("diagnose-density", parents=[common], help="Flag a vanishing score density at 0.")
    dd.add_argument("--data", required=True)
    dd.add_argument("--bins", type=int, default=DEFAULT_BINS)
    dd.add_argument("--window", type=float)
    dd.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    dd.add_argument("--out")
    dd.set_defaults(func=cmd_diagnose_density)

    mc = sub.add_parser("mc", parents=[_common(seed_default=None)], help="Run a Monte Carlo study.")
    mc.add_argument("--config", required=True)
    mc.add_argument("--out")
    mc.add_argument("--format", choices=FORMATS, default="csv")
    mc.add_argument("--timing", action="store_true", help="Record wall time per cell (output is no longer reproducible).")
    mc.set_defaults(func=cmd_mc)
    return parser


def _setup_logging(verbosity):
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(format="[rdforest] %(levelname)s %(name)s: %(message)s", level=level, stream=sys.stderr, force=True)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error[USAGE]: {e}", file=sys.stderr)
        return EXIT_USAGE
    _setup_logging(args.verbose)
    if args.threads is None:
        args.threads = cpu_count()
    if args.threads < 1:
        print("error[USAGE]: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except RDForestError as e:
        print(f"error[{e.code}]: {e}", file=sys.stderr)
        return e.exit_code
