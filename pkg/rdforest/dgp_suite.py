"""
Simulable data-generating processes with exact ground-truth effects.

    Y = mu_side(X) + N(0, sigma^2)                      gaussian_noise
    Y ~ Bernoulli(logistic(poly_side(X)))               bernoulli_logit

Score laws
----------
beta_transform   X = 2·Beta(2,4) - 1 on [-1, 1] (gamma-ratio construction)
uniform_square   X ~ U[-1, 1]^d
gaussian_iid     X ~ N(0, sigma_x^2 I_d)

Polynomial bases
----------------
raw_powers_1d            {1, x, x~^2, ..., x~^degree}
interacted_3rd_order_2d  {1, x1, x~1^2, x~1^3, x2, x~2^2, x~2^3, x~1·x~2}

where x~ = x - centers. Linear terms use the raw score, higher powers the
demeaned one, matching the printed coefficient tables so they load as-is.

Sampling is split into fixed-size chunks, each with its own derived seed,
so a (spec, n, seed) triple gives bit-identical data for any worker count.
"""

import json
import logging
import math
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit

from .domain_core import (
    CurveBoundary,
    Dataset,
    UnivariateThreshold,
    as_point,
    probe_boundary,
    rule_from_dict,
)
from .errors import BoundaryError, ConfigError, DimensionError, IoError
from .seeding import rng_for

logger = logging.getLogger(__name__)

CHUNK_SIZE = 1 << 16

SCORE_LAWS = ("beta_transform", "uniform_square", "gaussian_iid")
OUTCOME_KINDS = ("gaussian_noise", "bernoulli_logit")
BASES = {"raw_powers_1d": 1, "interacted_3rd_order_2d": 2}


# ---------------------------------------------------------------------------
# Conditional expectation functions
# ---------------------------------------------------------------------------

def _side_flag(side):
    if side in ("treated", 1, True):
        return True
    if side in ("control", 0, False):
        return False
    raise ConfigError(f"side must be 'treated' or 'control', got {side!r}")


@dataclass(frozen=True)
class PolynomialCEF:
    degree: int
    basis: str
    coeffs_treated: Tuple[float, ...]
    coeffs_control: Tuple[float, ...]
    centers: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.basis not in BASES:
            raise ConfigError(f"unknown polynomial basis {self.basis!r}; expected one of {sorted(BASES)}")
        if self.basis == "interacted_3rd_order_2d" and self.degree != 3:
            raise ConfigError("the interacted 2-d basis is third order only")
        if self.degree < 0:
            raise ConfigError(f"degree must be nonnegative, got {self.degree}")
        size = self.size
        for name in ("coeffs_treated", "coeffs_control"):
            coeffs = tuple(float(c) for c in getattr(self, name))
            if len(coeffs) != size:
                raise ConfigError(f"{name} has {len(coeffs)} entries, the {self.basis} basis of degree {self.degree} needs {size}")
            object.__setattr__(self, name, coeffs)
        centers = tuple(float(c) for c in self.centers) or (0.0,) * self.dim
        if len(centers) != self.dim:
            raise ConfigError(f"centers must have {self.dim} entries, got {len(centers)}")
        object.__setattr__(self, "centers", centers)

    @property
    def dim(self):
        return BASES[self.basis]

    @property
    def size(self):
        return self.degree + 1 if self.basis == "raw_powers_1d" else 8

    def design(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        Xt = X - np.asarray(self.centers)
        if self.basis == "raw_powers_1d":
            cols = [np.ones(len(X))]
            if self.degree >= 1:
                cols.append(X[:, 0])
            cols.extend(Xt[:, 0] ** p for p in range(2, self.degree + 1))
            return np.column_stack(cols)
        x1, x2 = X[:, 0], X[:, 1]
        t1, t2 = Xt[:, 0], Xt[:, 1]
        return np.column_stack([np.ones(len(X)), x1, t1**2, t1**3, x2, t2**2, t2**3, t1 * t2])

    def values(self, X, treated):
        """Vectorised evaluation; ``treated`` is a boolean array or scalar."""
        B = self.design(X)
        treated = np.broadcast_to(np.asarray(treated, dtype=bool), (B.shape[0],))
        return np.where(
            treated,
            B @ np.asarray(self.coeffs_treated),
            B @ np.asarray(self.coeffs_control),
        )


def eval_cef(cef, x, side):
    p = as_point(x)
    if p.dim != cef.dim:
        raise DimensionError(f"{cef.basis} basis is {cef.dim}-dimensional, point is {p.dim}-dimensional")
    return float(cef.values(p.array.reshape(1, -1), _side_flag(side))[0])


# ---------------------------------------------------------------------------
# DGP specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreLaw:
    kind: str = "beta_transform"
    dim: int = 1
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in SCORE_LAWS:
            raise ConfigError(f"unknown score law {self.kind!r}; expected one of {list(SCORE_LAWS)}")
        if self.kind == "beta_transform" and self.dim != 1:
            raise ConfigError("beta_transform scores are univariate")
        if self.dim < 1:
            raise ConfigError(f"score dimension must be positive, got {self.dim}")
        if self.kind == "gaussian_iid" and not self.sigma > 0:
            raise ConfigError(f"gaussian_iid needs sigma > 0, got {self.sigma}")

    def draw(self, rng, m):
        if self.kind == "beta_transform":
            g1 = rng.standard_gamma(2.0, m)
            g2 = rng.standard_gamma(4.0, m)
            return (2.0 * g1 / (g1 + g2) - 1.0).reshape(m, 1)
        if self.kind == "uniform_square":
            return rng.uniform(-1.0, 1.0, size=(m, self.dim))
        return self.sigma * rng.standard_normal((m, self.dim))


@dataclass(frozen=True)
class OutcomeModel:
    kind: str = "gaussian_noise"
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in OUTCOME_KINDS:
            raise ConfigError(f"unknown outcome kind {self.kind!r}; expected one of {list(OUTCOME_KINDS)}")
        if self.kind == "gaussian_noise" and not self.sigma >= 0:
            raise ConfigError(f"gaussian_noise needs sigma >= 0, got {self.sigma}")


@dataclass(frozen=True)
class DGPSpec:
    score_law: ScoreLaw
    cef: PolynomialCEF
    outcome: OutcomeModel
    rule: object
    name: str = ""

    def __post_init__(self):
        dims = {self.score_law.dim, self.cef.dim, self.rule.dim}
        if len(dims) != 1:
            raise DimensionError(
                f"score law ({self.score_law.dim}), CEF ({self.cef.dim}) and rule ({self.rule.dim}) dimensions disagree"
            )

    @property
    def dim(self):
        return self.cef.dim


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _chunks(n):
    return [(k, k * CHUNK_SIZE, min(n, (k + 1) * CHUNK_SIZE)) for k in range(math.ceil(n / CHUNK_SIZE))]


def _run_chunked(fn, n, n_jobs):
    parts = _chunks(n)
    if n_jobs == 1 or len(parts) == 1:
        out = [fn(k, lo, hi) for k, lo, hi in parts]
    else:
        out = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(fn)(k, lo, hi) for k, lo, hi in parts)
    return np.concatenate(out, axis=0)


def sample_scores(spec, n, seed, n_jobs=1):
    """n i.i.d. draws from spec.score_law as an (n, d) array."""
    if n < 1:
        raise ConfigError(f"n must be positive, got {n}")
    law = spec.score_law if isinstance(spec, DGPSpec) else spec
    if not isinstance(law, ScoreLaw):
        raise ConfigError(f"unknown score law {law!r}")
    return _run_chunked(lambda k, lo, hi: law.draw(rng_for(seed, "scores", k), hi - lo), n, n_jobs)


def simulate(spec, n, seed, n_jobs=1):
    X = sample_scores(spec, n, seed, n_jobs)
    d = spec.rule.assign_many(X)
    mean = spec.cef.values(X, d.astype(bool))
    if spec.outcome.kind == "gaussian_noise":
        sigma = spec.outcome.sigma
        noise = _run_chunked(
            lambda k, lo, hi: sigma * rng_for(seed, "outcomes", k).standard_normal(hi - lo), n, n_jobs,
        )
        y = mean + noise
    else:
        u = _run_chunked(lambda k, lo, hi: rng_for(seed, "outcomes", k).random(hi - lo), n, n_jobs)
        y = (u < expit(mean)).astype(float)
    logger.debug("simulated %d rows from %s (seed %s), %d treated", n, spec.name or "custom DGP", seed, int(d.sum()))
    return Dataset(y, X, d, spec.rule)


def true_effect(spec, x_c):
    """tau(x_c) from the CEF coefficients; never samples."""
    p = as_point(x_c)
    if p.dim != spec.dim:
        raise DimensionError(f"DGP is {spec.dim}-dimensional, point is {p.dim}-dimensional")
    if not probe_boundary(spec.rule, p):
        raise BoundaryError(f"({p}) is not on the treatment boundary of {spec.name or 'the DGP'}")
    if spec.outcome.kind == "gaussian_noise":
        return eval_cef(spec.cef, p, "treated") - eval_cef(spec.cef, p, "control")
    return float(expit(eval_cef(spec.cef, p, "treated")) - expit(eval_cef(spec.cef, p, "control")))


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

_LINE_THROUGH_ORIGIN = CurveBoundary(((-1.0, 0.0), (1.0, 0.0)), "below")


def lee_preset(sigma=0.1295):
    cef = PolynomialCEF(
        degree=5,
        basis="raw_powers_1d",
        coeffs_treated=(0.52, 0.84, -3.00, 7.99, -9.01, 3.56),
        coeffs_control=(0.48, 1.27, 7.18, 20.21, 21.54, 7.33),
    )
    return DGPSpec(ScoreLaw("beta_transform"), cef, OutcomeModel("gaussian_noise", sigma), UnivariateThreshold(0.0), "lee")


def _bivariate(name, treated, control, outcome, centers):
    cef = PolynomialCEF(3, "interacted_3rd_order_2d", treated, control, centers)
    return DGPSpec(ScoreLaw("uniform_square", 2), cef, outcome, _LINE_THROUGH_ORIGIN, name)


def bivariate_preset(centers=(0.0, 0.0), sigma=0.1):
    return _bivariate(
        "bivariate",
        (1.0, 0.5, 0.3, 0.1, -0.4, 0.2, 0.05, 0.25),
        (0.6, 0.8, -0.2, 0.1, -0.3, 0.1, 0.0, 0.1),
        OutcomeModel("gaussian_noise", sigma),
        centers,
    )


def kt_price_preset(centers=(0.0, 0.0), sigma=32.6334):
    return _bivariate(
        "kt_price",
        (13544.3, 150.2, -11847.6, -29821.7, 259.3, -15479.8, -207469.6, 24446.9),
        (230407.6, -9713.5, 537644.5, -8356369.6, -2164.6, -9998.4, 748352.9, 55631.1),
        OutcomeModel("gaussian_noise", sigma),
        centers,
    )


def kt_age_preset(centers=(0.0, 0.0), sigma=15.9496):
    return _bivariate(
        "kt_age",
        (-477.8, -70.0, -111.9, -54704.1, -44.9, 4564.6, 107699.6, -5863.3),
        (77307.5, -1026.2, 60847.1, -749930.1, 481.1, -13224.5, 185693.5, -16725.5),
        OutcomeModel("gaussian_noise", sigma),
        centers,
    )


def kt_turnout_preset(centers=(0.0, 0.0)):
    return _bivariate(
        "kt_turnout",
        (-200.4, 3.7, 224.4, 1028.1, -0.7, 57.1, 3778.1, -127.5),
        (10399.6, -286.5, 10516.0, -114884.8, -15.4, -423.8, 12700.1, 228.7),
        OutcomeModel("bernoulli_logit"),
        centers,
    )


DGP_PRESET_MAPPINGS = {
    "lee": lee_preset,
    "bivariate": bivariate_preset,
    "kt_price": kt_price_preset,
    "kt_age": kt_age_preset,
    "kt_turnout": kt_turnout_preset,
}

DGP_DISPLAY_NAME_MAPPINGS = {
    "lee": "Lee vote share, 5th-order polynomial (univariate)",
    "bivariate": "Interacted cubic on the unit square (bivariate)",
    "kt_price": "KT housing price, interacted cubic (bivariate)",
    "kt_age": "KT age, interacted cubic (bivariate)",
    "kt_turnout": "KT turnout, logit interacted cubic (bivariate)",
}


def preset(name, **overrides):
    if name not in DGP_PRESET_MAPPINGS:
        raise ConfigError(f"unknown DGP preset {name!r}; expected one of {sorted(DGP_PRESET_MAPPINGS)}")
    try:
        return DGP_PRESET_MAPPINGS[name](**overrides)
    except TypeError as e:
        raise ConfigError(f"preset {name!r} does not accept {sorted(overrides)}: {e}") from None


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

_DGP_KEYS = {"name", "score_law", "cef", "outcome", "rule"}
_SECTION_KEYS = {
    "score_law": {"kind", "dim", "sigma"},
    "cef": {"degree", "basis", "coeffs_treated", "coeffs_control", "centers"},
    "outcome": {"kind", "sigma"},
}


def _section(spec, key, cls):
    body = spec.get(key)
    if not isinstance(body, dict):
        raise ConfigError(f"dgp.{key} must be an object")
    extra = set(body) - _SECTION_KEYS[key]
    if extra:
        raise ConfigError(f"unknown keys in dgp.{key}: {sorted(extra)}")
    try:
        return cls(**body)
    except TypeError as e:
        raise ConfigError(f"invalid dgp.{key}: {e}") from None


def dgp_from_dict(spec):
    """A preset name, ``{"preset": name, **overrides}`` or a full DGP object."""
    if isinstance(spec, str):
        return preset(spec)
    if not isinstance(spec, dict):
        raise ConfigError(f"dgp must be a preset name or an object, got {spec!r}")
    if "preset" in spec:
        overrides = {k: v for k, v in spec.items() if k != "preset"}
        if "centers" in overrides:
            overrides["centers"] = tuple(overrides["centers"])
        return preset(spec["preset"], **overrides)
    extra = set(spec) - _DGP_KEYS
    if extra:
        raise ConfigError(f"unknown keys in dgp: {sorted(extra)}")
    if "rule" not in spec:
        raise ConfigError("dgp.rule is required")
    cef_body = dict(spec.get("cef") or {})
    for key in ("coeffs_treated", "coeffs_control", "centers"):
        if key in cef_body:
            cef_body[key] = tuple(cef_body[key])
    return DGPSpec(
        _section(spec, "score_law", ScoreLaw),
        _section({"cef": cef_body}, "cef", PolynomialCEF),
        _section(spec, "outcome", OutcomeModel),
        rule_from_dict(spec["rule"]),
        spec.get("name", ""),
    )


def load_dgp(path):
    try:
        with open(path, encoding="utf-8") as f:
            return dgp_from_dict(json.load(f))
    except OSError as e:
        raise IoError(f"cannot read DGP file {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"DGP file {path} is not valid JSON: {e}") from None


def with_sigma(spec, sigma):
    return replace(spec, outcome=OutcomeModel(spec.outcome.kind, sigma))
