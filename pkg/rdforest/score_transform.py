"""
Collapsing multivariate scores to a signed distance, and the zero-density
problem that comes with it.

    s_i = sign_i · scale · ||x_i - center||_2,   sign_i = +1 treated, -1 control

The collapsed score's density at the new cutoff 0 is

    f_E(e) = ∫ e / sqrt(e² - v²) · [f(v + c1,  sqrt(e² - v²) + c2)
                                   + f(v + c1, -sqrt(e² - v²) + c2)] dv

which vanishes as e -> 0 for any bounded joint density. The integral is
evaluated after substituting v = e·sin(θ), which turns the endpoint
singularity into the smooth integrand e·[f(c1 + e sinθ, c2 + e cosθ) +
f(c1 + e sinθ, c2 - e cosθ)] over θ, then Gauss-Legendre.

zero_density_diagnostic() is an operational rule, not a formal test: it
compares the histogram density just either side of 0 with the density in
the adjacent band (window, 5·window] and flags a ratio below threshold.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre

from .domain_core import Dataset, as_point
from .errors import ConfigError, DimensionError, DomainError, EmptySideError, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_BINS = 10_000
DEFAULT_THRESHOLD = 0.25
WINDOW_DIVISOR = 200
REFERENCE_MULTIPLE = 5
CRITERION = "near-zero / adjacent-band histogram density ratio (operational rule)"


# ---------------------------------------------------------------------------
# Collapse
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CollapseSpec:
    center: object
    rule: object
    scale: float = 1.0

    def __post_init__(self):
        center = as_point(self.center)
        object.__setattr__(self, "center", center)
        if center.dim < 2:
            raise ConfigError("collapsing needs a multivariate center (dimension >= 2)")
        if not self.scale > 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")
        if self.rule.dim != center.dim:
            raise DimensionError(f"rule is {self.rule.dim}-dimensional, center is {center.dim}-dimensional")


def collapse(data, spec):
    """Univariate dataset of signed distances to spec.center; cutoff becomes 0."""
    if data.dim != spec.center.dim:
        raise DimensionError(f"data is {data.dim}-dimensional, center is {spec.center.dim}-dimensional")
    sign = np.where(spec.rule.assign_many(data.x) == 1, 1.0, -1.0)
    dist = np.linalg.norm(data.x - spec.center.array, axis=1)
    return Dataset(data.y, (sign * spec.scale * dist).reshape(-1, 1), data.d)


# ---------------------------------------------------------------------------
# Analytic densities of the collapsed score
# ---------------------------------------------------------------------------

def analytic_density_uniform(e):
    """Density of ||X|| for X uniform on [-1, 1]^2."""
    if not 0.0 <= e <= math.sqrt(2.0) + 1e-12:
        raise DomainError(f"e must lie in [0, sqrt(2)], got {e}")
    if e <= 1.0:
        return math.pi * e / 2.0
    inner = min(1.0, math.sqrt(max(e * e - 1.0, 0.0)) / e)
    return e * (math.asin(min(1.0, 1.0 / e)) - math.asin(inner))


def analytic_density_gaussian(e, sigma=1.0):
    """Density of ||X|| for X ~ N(0, sigma^2 I_2) (Rayleigh)."""
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if e < 0:
        raise DomainError(f"e must be nonnegative, got {e}")
    return e / sigma**2 * math.exp(-e * e / (2.0 * sigma**2))


def uniform_square_density(x1, x2):
    inside = (np.abs(x1) <= 1.0) & (np.abs(x2) <= 1.0)
    return np.where(inside, 0.25, 0.0)


def gaussian_density(sigma=1.0):
    def f(x1, x2):
        return np.exp(-(x1**2 + x2**2) / (2.0 * sigma**2)) / (2.0 * math.pi * sigma**2)
    return f


def uniform_square_bounds(e):
    """v-support of the uniform square about (0, 0)."""
    if e <= 1.0:
        return (-e, e)
    lo = math.sqrt(e * e - 1.0)
    return [(-1.0, -lo), (lo, 1.0)]


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

def _intervals(bounds, e):
    if bounds is None:
        return [(-e, e)]
    got = bounds(e)
    pairs = [got] if np.ndim(got) == 1 else list(got)
    for lo, hi in pairs:
        if lo > hi:
            raise ConfigError(f"quadrature bounds must satisfy l <= u, got ({lo}, {hi}) at e={e}")
    return pairs


def prop1_marginal_by_quadrature(joint_density, center, e, bounds=None, nodes=512):
    """Marginal density of the distance to ``center`` at e.

    ``bounds(e)`` returns the v-range (one (l, u) pair or a list of pairs);
    the default is the full chord [-e, e].
    """
    if not e > 0:
        raise DomainError(f"e must be positive, got {e}")
    if nodes < 16:
        raise ConfigError(f"quadrature needs at least 16 nodes, got {nodes}")
    c1, c2 = as_point(center).coords[:2]
    t, w = roots_legendre(nodes)
    total = 0.0
    for lo, hi in _intervals(bounds, e):
        a = math.asin(max(-1.0, min(1.0, lo / e)))
        b = math.asin(max(-1.0, min(1.0, hi / e)))
        theta = 0.5 * (b - a) * t + 0.5 * (a + b)
        u = c1 + e * np.sin(theta)
        h = e * np.cos(theta)
        g = e * (joint_density(u, c2 + h) + joint_density(u, c2 - h))
        total += 0.5 * (b - a) * float(np.dot(w, g))
    if not math.isfinite(total):
        raise NumericalError(f"quadrature produced a non-finite value at e={e}")
    return total


# ---------------------------------------------------------------------------
# Zero-density diagnostic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DensityDiagnostic:
    density_near_zero: dict
    reference_density: dict
    ratio: dict
    flagged: bool
    bins: int
    window: float
    threshold: float
    criterion: str = field(default=CRITERION)

    def to_dict(self):
        return {
            "flagged": self.flagged,
            "criterion": self.criterion,
            "threshold": self.threshold,
            "bins": self.bins,
            "window": self.window,
            "density_near_zero": self.density_near_zero,
            "reference_density": self.reference_density,
            "ratio": self.ratio,
        }


def _side_densities(side_scores, n, width, k_window):
    edges = width * np.arange(REFERENCE_MULTIPLE * k_window + 1)
    counts, _ = np.histogram(side_scores, bins=edges)
    near = counts[:k_window].sum() / (n * k_window * width)
    ref = counts[k_window:].sum() / (n * (REFERENCE_MULTIPLE - 1) * k_window * width)
    if ref > 0:
        ratio = near / ref
    else:
        ratio = math.inf if near > 0 else 0.0
    return float(near), float(ref), float(ratio)


def zero_density_diagnostic(scores, bins=DEFAULT_BINS, window=None, threshold=DEFAULT_THRESHOLD):
    s = np.asarray(scores, dtype=float).ravel()
    pos, neg = s[s > 0], -s[s < 0]
    if pos.size == 0 or neg.size == 0:
        raise EmptySideError("density diagnostic needs scores on both sides of 0")
    if bins < 1:
        raise ConfigError(f"bins must be positive, got {bins}")
    span = float(s.max() - s.min())
    if window is None:
        window = span / WINDOW_DIVISOR
    if not 0 < window < span / 2:
        raise ConfigError(f"window must lie in (0, {span / 2:.6g}), got {window}")
    width = span / bins
    k_window = max(1, int(round(window / width)))
    result = {}
    for side, values in (("treated", pos), ("control", neg)):
        result[side] = _side_densities(values, s.size, width, k_window)
    ratio = {side: r[2] for side, r in result.items()}
    diag = DensityDiagnostic(
        density_near_zero={side: r[0] for side, r in result.items()},
        reference_density={side: r[1] for side, r in result.items()},
        ratio=ratio,
        flagged=min(ratio.values()) < threshold,
        bins=int(bins),
        window=k_window * width,
        threshold=float(threshold),
    )
    if diag.flagged:
        logger.info("zero density flagged: ratios %s below %s", ratio, threshold)
    return diag
