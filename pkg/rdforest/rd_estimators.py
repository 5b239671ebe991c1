"""
Regression-discontinuity estimators at a boundary point.

    tau(x_c) = mu+(x+) - mu-(x-),      SE = sqrt(v+ + v-)

mu+ and mu- are fitted on the treated and control rows only. Forest methods
evaluate each side slightly inside its own region,

    x± = x_c ± eps_eff · n(x_c),   eps_eff = max(buffer_epsilon, 8 ulp(max |x_c|))

where n(x_c) is the rule's unit normal pointing into the treated region.
Side variances come from the little-bags estimator (forests) or the HC0
sandwich (llr); the sides use disjoint rows so they are added.

Method registry
---------------
rf   honest regression forest, CART splits
llf  local linear forest, ridge-residual splits
llr  kernel local linear regression (univariate scores only)

Each side's forest seed is derived from the method seed and a digest of that
side's scores, so relabelling the sides or shifting outcomes leaves every
tree unchanged.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .config import FOREST_PARAMS, KERNEL_PARAMS, METHOD_PARAMS, default_of, options_from_args, parse_section
from .domain_core import BoundaryPoint, EstimateReport, as_point, score_scale, split_by_treatment
from .errors import ConfigError, DimensionError, GeometryError, MethodError
from .honest_forest import (
    ForestConfig,
    grow_forest,
    little_bags_variance,
    llf_predict,
    rf_predict,
    select_lambda,
)
from .local_linear import KernelSpec, llr_rd_estimate
from .seeding import array_digest, derive_seed

logger = logging.getLogger(__name__)

FOREST_METHODS = ("rf", "llf")
ULP_MULTIPLE = 8
METHOD_FOREST_DEFAULTS = {
    "rf": {"split_rule": "cart"},
    "llf": {"split_rule": "ridge_residual", "weight_penalty": True},
}


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RDMethodConfig:
    method: str = default_of(METHOD_PARAMS, "method")
    forest: Optional[ForestConfig] = None
    kernel: Optional[KernelSpec] = None
    buffer_epsilon: float = default_of(METHOD_PARAMS, "buffer_epsilon")
    level: float = default_of(METHOD_PARAMS, "level")
    name: str = ""

    def __post_init__(self):
        if self.method not in METHOD_CLASS_MAPPINGS:
            raise MethodError(f"unknown method {self.method!r}; expected one of {sorted(METHOD_CLASS_MAPPINGS)}")
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f"level must lie in (0, 1), got {self.level}")
        if not self.buffer_epsilon >= 0:
            raise ConfigError(f"buffer_epsilon must be nonnegative, got {self.buffer_epsilon}")
        if self.is_forest:
            if self.kernel is not None:
                raise ConfigError(f"kernel options do not apply to the {self.method} method")
            if self.forest is None:
                object.__setattr__(self, "forest", ForestConfig(**METHOD_FOREST_DEFAULTS[self.method]))
        else:
            if self.forest is not None:
                raise ConfigError("forest options do not apply to the llr method")
            if self.kernel is None:
                object.__setattr__(self, "kernel", KernelSpec())

    @property
    def is_forest(self):
        return self.method in FOREST_METHODS

    @property
    def label(self):
        return self.name or self.method

    def with_seed(self, seed, n_jobs=None):
        if not self.is_forest:
            return self
        changes = {"seed": int(seed)}
        if n_jobs is not None:
            changes["n_jobs"] = int(n_jobs)
        return replace(self, forest=replace(self.forest, **changes))


def method_config(method, forest_options=None, kernel_options=None, seed=0, n_jobs=1, **method_options):
    """Build an RDMethodConfig from validated option dicts."""
    forest_options = dict(forest_options or {})
    kernel_options = dict(kernel_options or {})
    if method not in METHOD_CLASS_MAPPINGS:
        raise MethodError(f"unknown method {method!r}; expected one of {sorted(METHOD_CLASS_MAPPINGS)}")
    if method in FOREST_METHODS:
        if kernel_options:
            raise ConfigError(f"{', '.join(sorted(kernel_options))} cannot be used with the {method} method")
        for key, value in METHOD_FOREST_DEFAULTS[method].items():
            if forest_options.get(key) is None:
                forest_options[key] = value
        forest = ForestConfig(**forest_options, seed=int(seed), n_jobs=int(n_jobs))
        return RDMethodConfig(method, forest=forest, **method_options)
    if forest_options:
        raise ConfigError(f"{', '.join(sorted(forest_options))} cannot be used with the llr method")
    kernel = KernelSpec(kernel_options.get("kernel", default_of(KERNEL_PARAMS, "kernel")), kernel_options.get("bandwidth"))
    return RDMethodConfig(method, kernel=kernel, **method_options)


def method_config_from_dict(spec, where="", level=None, seed=0):
    """``"rf"`` or a flat object such as ``{"method": "llf", "num_trees": 1000, "name": "llf-1k"}``."""
    if isinstance(spec, str):
        spec = {"method": spec}
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}method entry must be a name or an object, got {spec!r}")
    method = spec.get("method", default_of(METHOD_PARAMS, "method"))
    if method not in METHOD_CLASS_MAPPINGS:
        raise MethodError(f"{where}unknown method {method!r}; expected one of {sorted(METHOD_CLASS_MAPPINGS)}")
    parsed = parse_section(input_schema(method), spec, where, allow=("name",))
    method_options = {k: parsed.pop(k) for k in ("buffer_epsilon", "level") if k in parsed}
    if level is not None:
        method_options.setdefault("level", level)
    name = parsed.pop("name", "")
    if not isinstance(name, str):
        raise ConfigError(f"{where}name must be a string, got {name!r}")
    parsed.pop("method", None)
    if method in FOREST_METHODS:
        return method_config(method, forest_options=parsed, seed=seed, name=name, **method_options)
    return method_config(method, kernel_options=parsed, name=name, **method_options)


def method_config_from_args(args):
    """RDMethodConfig from parsed CLI flags; rejects flags foreign to the method."""
    method_options = options_from_args(METHOD_PARAMS, args)
    method = method_options.pop("method", default_of(METHOD_PARAMS, "method"))
    return method_config(
        method,
        forest_options=options_from_args(FOREST_PARAMS, args),
        kernel_options=options_from_args(KERNEL_PARAMS, args),
        seed=getattr(args, "seed", 0) or 0,
        n_jobs=getattr(args, "threads", 1) or 1,
        **method_options,
    )


# ---------------------------------------------------------------------------
# Boundary buffer
# ---------------------------------------------------------------------------

def effective_buffer(x_c, epsilon):
    """max(epsilon, 8 ulps of the largest coordinate magnitude)."""
    if not epsilon >= 0:
        raise ConfigError(f"buffer epsilon must be nonnegative, got {epsilon}")
    magnitude = max(abs(c) for c in as_point(x_c).coords)
    floor = ULP_MULTIPLE * float(np.spacing(magnitude))
    return max(float(epsilon), floor), epsilon < floor


def buffered_eval_points(x_c, epsilon, rule=None):
    """(x+, x-) shifted off the boundary along the rule's inward normal."""
    if isinstance(x_c, BoundaryPoint):
        rule = rule or x_c.rule
    if rule is None:
        raise ConfigError("buffered evaluation points need an assignment rule")
    point = as_point(x_c)
    if point.dim != rule.dim:
        raise DimensionError(f"rule is {rule.dim}-dimensional, point is {point.dim}-dimensional")
    eps, floored = effective_buffer(point, epsilon)
    if floored:
        logger.warning("buffer %.3g is below double precision at (%s); using %.3g", epsilon, point, eps)
    normal = np.asarray(rule.inward_normal(point.array), dtype=float)
    plus = point.array + eps * normal
    minus = point.array - eps * normal
    labels = rule.assign_many(np.vstack([plus, minus]))
    if labels[0] != 1 or labels[1] != 0:
        raise GeometryError(f"buffered points around ({point}) land on the wrong side (eps={eps:.3g})")
    return as_point(plus), as_point(minus)


# ---------------------------------------------------------------------------
# Fitting and estimation
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class FittedRD:
    config: RDMethodConfig
    rule: object
    data: object
    treated: object = None
    control: object = None


def _side_seed(seed, side):
    return derive_seed(seed, "side", array_digest(side.x))


def fit_rd(data, rule, config):
    """Fit the treated and control sides separately."""
    if rule.dim != data.dim:
        raise DimensionError(f"rule is {rule.dim}-dimensional, data is {data.dim}-dimensional")
    if not config.is_forest:
        if data.dim != 1:
            raise MethodError("llr is univariate only; collapse multivariate scores first")
        split_by_treatment(data, rule)
        return FittedRD(config, rule, data)
    treated, control = split_by_treatment(data, rule)
    forests = {}
    for name, side in (("treated", treated), ("control", control)):
        cfg = config.forest
        if math.isfinite(cfg.min_node_size) and side.n < 2 * cfg.min_node_size:
            raise ConfigError(f"{name} side has {side.n} rows; at least 2 * min_node_size ({cfg.min_node_size}) are needed")
        cfg = replace(cfg, seed=_side_seed(cfg.seed, side))
        forests[name] = grow_forest(side, cfg, variant=config.method)
    logger.debug(
        "fitted %s on %d treated / %d control rows (s=%d/%d)",
        config.method, treated.n, control.n, forests["treated"].subsample_size, forests["control"].subsample_size,
    )
    return FittedRD(config, rule, data, forests["treated"], forests["control"])


def _forest_side(forest, x, method):
    if method == "rf":
        return rf_predict(forest, x), little_bags_variance(forest, x, "rf"), None
    lam = forest.config.ridge_lambda
    if lam == "auto":
        lam = select_lambda(forest, x)
    return llf_predict(forest, x, lam), little_bags_variance(forest, x, "llf", lam), lam


def estimate_at(fitted, x_c):
    """EstimateReport for tau at boundary point x_c."""
    config = fitted.config
    if not isinstance(x_c, BoundaryPoint) or x_c.rule != fitted.rule:
        x_c = BoundaryPoint(as_point(x_c), fitted.rule, score_scale(fitted.data.x))
    if not config.is_forest:
        return llr_rd_estimate(fitted.data, x_c.point.coords[0], config.kernel, config.level, fitted.rule)
    plus, minus = buffered_eval_points(x_c, config.buffer_epsilon)
    mu_plus, v_plus, lam_plus = _forest_side(fitted.treated, plus, config.method)
    mu_minus, v_minus, lam_minus = _forest_side(fitted.control, minus, config.method)
    details = {
        "mu_plus": mu_plus,
        "mu_minus": mu_minus,
        "eval_plus": list(plus.coords),
        "eval_minus": list(minus.coords),
        "buffer": effective_buffer(x_c.point, config.buffer_epsilon)[0],
        "num_trees": config.forest.num_trees,
        "subsample_treated": fitted.treated.subsample_size,
        "subsample_control": fitted.control.subsample_size,
        "split_rule": config.forest.split_rule,
        "weight_penalty": config.forest.weight_penalty,
    }
    if config.method == "llf":
        details["lambda_treated"], details["lambda_control"] = lam_plus, lam_minus
    return EstimateReport.build(
        mu_plus - mu_minus,
        math.sqrt(v_plus + v_minus),
        config.level,
        fitted.treated.y.size,
        n_control=fitted.control.y.size,
        method=config.label,
        details=details,
    )


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

class RDEstimator:
    """Callable ``(data, x_c, seed) -> EstimateReport`` bound to one config."""

    METHOD = ""

    @classmethod
    def INPUT_TYPES(cls):
        return {"method": METHOD_PARAMS}

    def __init__(self, config=None):
        self.config = config or RDMethodConfig(self.METHOD)
        if self.config.method != self.METHOD:
            raise MethodError(f"{type(self).__name__} runs {self.METHOD}, config says {self.config.method}")

    @property
    def label(self):
        return self.config.label

    def __call__(self, data, x_c, seed=0):
        rule = data.rule or getattr(x_c, "rule", None)
        if rule is None:
            raise ConfigError("estimation needs an assignment rule on the data or the boundary point")
        return estimate_at(fit_rd(data, rule, self.config.with_seed(seed)), x_c)


class HonestForestRD(RDEstimator):
    METHOD = "rf"

    @classmethod
    def INPUT_TYPES(cls):
        return {"method": METHOD_PARAMS, "forest": FOREST_PARAMS}


class LocalLinearForestRD(HonestForestRD):
    METHOD = "llf"


class LocalLinearRD(RDEstimator):
    METHOD = "llr"

    @classmethod
    def INPUT_TYPES(cls):
        return {"method": METHOD_PARAMS, "kernel": KERNEL_PARAMS}


METHOD_CLASS_MAPPINGS = {
    "rf": HonestForestRD,
    "llf": LocalLinearForestRD,
    "llr": LocalLinearRD,
}

METHOD_DISPLAY_NAME_MAPPINGS = {
    "rf": "Honest regression forest",
    "llf": "Local linear forest",
    "llr": "Local linear regression (kernel)",
}


def estimator_for(config):
    return METHOD_CLASS_MAPPINGS[config.method](config)


def input_schema(method):
    """Flat parameter schema of one method, merged from its estimator's INPUT_TYPES."""
    sections = METHOD_CLASS_MAPPINGS[method].INPUT_TYPES()
    return {name: spec for schema in sections.values() for name, spec in schema.items()}


def estimate_sections():
    """Every parameter section some registered estimator takes, in registry order."""
    sections = {}
    for cls in METHOD_CLASS_MAPPINGS.values():
        sections.update(cls.INPUT_TYPES())
    return sections


def method_summary():
    return "; ".join(f"{key} = {name}" for key, name in METHOD_DISPLAY_NAME_MAPPINGS.items())
