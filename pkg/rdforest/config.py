"""
Parameter schemas for estimators, kernels and study files.

Each schema maps a parameter name to ``(TYPE, options)`` where TYPE is one of
INT, FLOAT, BOOLEAN, COMBO (fixed choices) or LAMBDA (a float or "auto"), and
options carries ``default``, bounds (``min``/``max``, exclusive when
``min_open``/``max_open`` is set), ``choices``, the CLI ``flag`` and a
``tooltip`` used as help text. One schema drives three things:

    parse_section()  validation of JSON sections (unknown keys rejected)
    add_flags()      argparse flags for the CLI
    fingerprint()    digest of every default, printed by --version
"""

import argparse
import hashlib
import json
import math
import numbers

from .errors import ConfigError

FOREST_PARAMS = {
    "num_trees": ("INT", {
        "default": 2000, "min": 2, "flag": "--trees",
        "tooltip": "Trees per side; must be a multiple of the CI group size.",
    }),
    "mtry": ("INT", {
        "default": 1, "min": 1, "flag": "--mtry",
        "tooltip": "Candidate features drawn at each node.",
    }),
    "min_node_size": ("INT", {
        "default": 5, "min": 1, "flag": "--min-node",
        "tooltip": "Minimum estimation-half members in each child.",
    }),
    "alpha": ("FLOAT", {
        "default": 0.05, "min": 0.0, "max": 0.5, "min_open": True, "max_open": False,
        "flag": "--alpha",
        "tooltip": "Split balance: each child keeps at least this fraction of the node's split half.",
    }),
    "honesty_fraction": ("FLOAT", {
        "default": 0.5, "min": 0.0, "max": 1.0, "min_open": True, "max_open": True,
        "flag": "--honesty-fraction",
        "tooltip": "Share of each subsample used to place splits.",
    }),
    "c_scale": ("FLOAT", {
        "default": 0.4, "min": 0.05, "max": 0.5, "flag": "--c-scale",
        "tooltip": "Subsample scaling constant c in s = c * ceil(n^beta).",
    }),
    "sample_fraction": ("FLOAT", {
        "default": None, "min": 0.0, "max": 0.5, "min_open": True, "flag": "--sample-fraction",
        "tooltip": "Fixed subsample fraction; overrides the beta rule when set.",
    }),
    "split_rule": ("COMBO", {
        "default": None, "choices": ("cart", "ridge_residual"), "flag": "--split-rule",
        "tooltip": "Split criterion; defaults to cart for rf and ridge_residual for llf.",
    }),
    "ridge_lambda": ("LAMBDA", {
        "default": 0.1, "min": 0.0, "flag": "--lambda",
        "tooltip": "Slope penalty for local linear forests, or 'auto'.",
    }),
    "weight_penalty": ("BOOLEAN", {
        "default": False, "flag": "--weight-penalty",
        "tooltip": "Scale the slope penalty by the weighted variance of each score (on by default for llf).",
    }),
    "ci_group_size": ("INT", {
        "default": 2, "min": 2, "flag": "--ci-group-size",
        "tooltip": "Trees per little bag.",
    }),
}

KERNEL_PARAMS = {
    "kernel": ("COMBO", {
        "default": "triangular", "choices": ("triangular", "epanechnikov", "uniform"),
        "flag": "--kernel",
    }),
    "bandwidth": ("FLOAT", {
        "default": None, "min": 0.0, "min_open": True, "flag": "--bandwidth",
        "tooltip": "Fixed bandwidth h; rule of thumb when omitted.",
    }),
}

METHOD_PARAMS = {
    "method": ("COMBO", {"default": "rf", "choices": ("rf", "llf", "llr"), "flag": "--method"}),
    "buffer_epsilon": ("FLOAT", {
        "default": 1e-9, "min": 0.0, "flag": "--buffer",
        "tooltip": "Distance of the forest evaluation points from the boundary.",
    }),
    "level": ("FLOAT", {
        "default": 0.95, "min": 0.0, "max": 1.0, "min_open": True, "max_open": True,
        "flag": "--level",
    }),
}

STUDY_KEYS = ("dgp", "boundary_point", "methods", "sample_sizes", "replications", "seed", "level")

SCHEMAS = {"forest": FOREST_PARAMS, "kernel": KERNEL_PARAMS, "method": METHOD_PARAMS}


def default_of(schema, name):
    return schema[name][1]["default"]


def defaults(schema):
    return {name: opts["default"] for name, (_, opts) in schema.items()}


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _check_range(name, value, opts, where):
    lo, hi = opts.get("min"), opts.get("max")
    if lo is not None and (value < lo or (opts.get("min_open") and value == lo)):
        bound = ">" if opts.get("min_open") else ">="
        raise ConfigError(f"{where}{name} must be {bound} {lo}, got {value}")
    if hi is not None and (value > hi or (opts.get("max_open") and value == hi)):
        bound = "<" if opts.get("max_open") else "<="
        raise ConfigError(f"{where}{name} must be {bound} {hi}, got {value}")


def coerce(name, value, spec, where=""):
    """Validate one value against its schema entry and return it typed."""
    kind, opts = spec
    if value is None:
        if opts.get("default") is None:
            return None
        raise ConfigError(f"{where}{name} may not be null")
    if kind == "BOOLEAN":
        if not isinstance(value, bool):
            raise ConfigError(f"{where}{name} must be true or false, got {value!r}")
        return value
    if kind == "COMBO":
        if value not in opts["choices"]:
            raise ConfigError(f"{where}{name} must be one of {list(opts['choices'])}, got {value!r}")
        return value
    if kind == "LAMBDA" and value == "auto":
        return value
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ConfigError(f"{where}{name} must be a number, got {value!r}")
    if kind == "INT":
        if not float(value).is_integer():
            raise ConfigError(f"{where}{name} must be an integer, got {value!r}")
        value = int(value)
    else:
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"{where}{name} must be finite, got {value!r}")
    _check_range(name, value, opts, where)
    return value


def parse_section(schema, mapping, where="", allow=()):
    """Validate a JSON object against schema; returns only the keys given.

    Keys listed in ``allow`` are passed through untouched for the caller.
    """
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where}expected an object, got {type(mapping).__name__}")
    unknown = set(mapping) - set(schema) - set(allow)
    if unknown:
        raise ConfigError(f"{where}unknown keys {sorted(unknown)}")
    out = {}
    for key, value in mapping.items():
        out[key] = value if key in allow else coerce(key, value, schema[key], where)
    return out


# ---------------------------------------------------------------------------
# CLI flags
# ---------------------------------------------------------------------------

def _lambda_arg(text):
    return text if text == "auto" else float(text)


_ARG_TYPES = {"INT": int, "FLOAT": float, "LAMBDA": _lambda_arg}


def add_flags(parser, schema, skip=()):
    """Add one flag per flagged schema entry; unset flags stay None."""
    for name, (kind, opts) in schema.items():
        flag = opts.get("flag")
        if not flag or name in skip:
            continue
        kwargs = {"dest": name, "default": None, "help": opts.get("tooltip")}
        if kind == "BOOLEAN":
            kwargs.update(action=argparse.BooleanOptionalAction)
        elif kind == "COMBO":
            kwargs.update(choices=opts["choices"])
        else:
            kwargs.update(type=_ARG_TYPES[kind])
        parser.add_argument(flag, **kwargs)


def options_from_args(schema, args):
    given = {
        name: getattr(args, name)
        for name, (_, opts) in schema.items()
        if opts.get("flag") and getattr(args, name, None) is not None
    }
    return parse_section(schema, given)


def fingerprint():
    """Short digest of every schema default, for reproducibility records."""
    payload = json.dumps({k: defaults(s) for k, s in SCHEMAS.items()}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]
