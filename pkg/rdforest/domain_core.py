"""
Core data model: scores, treatment geometry, datasets and estimate reports.

Sharp design only. A rule A(x) maps every finite score of its dimension to
exactly one of {0, 1}; the treated side is closed (x = cutoff is treated).

Rule variants
-------------
UnivariateThreshold(cutoff)            1 iff x >= cutoff
HalfPlane(normal, offset)              1 iff normal·x >= offset
CurveBoundary(vertices, treated_side)  polyline x2 = g(x1); 1 iff x2 <= g
                                       ("below") or x2 >= g ("above").
                                       Outside the vertex range the end
                                       segments are extended.
ComplementRule(base)                   1 - base(x)

Dataset CSV format: header ``y,x1,...,xd[,d]``. When a rule is supplied the
optional ``d`` column must agree with it; when it is absent the labels are
derived from the rule.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .errors import (
    BoundaryError,
    ConfigError,
    DimensionError,
    EmptySideError,
    IoError,
)
from .seeding import rng_for

logger = logging.getLogger(__name__)

PROBE_RADII = (1e-1, 1e-2, 1e-3)
PROBES_PER_RADIUS = 64


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScorePoint:
    coords: Tuple[float, ...]

    def __post_init__(self):
        coords = tuple(float(c) for c in np.atleast_1d(np.asarray(self.coords, dtype=float)).ravel())
        if not coords:
            raise DimensionError("a score point needs at least one coordinate")
        if not all(math.isfinite(c) for c in coords):
            raise DimensionError(f"score coordinates must be finite, got {coords}")
        object.__setattr__(self, "coords", coords)

    @property
    def dim(self):
        return len(self.coords)

    @property
    def array(self):
        return np.array(self.coords, dtype=float)

    def __str__(self):
        return ",".join(f"{c:.6g}" for c in self.coords)


def as_point(x):
    """Coerce a float, sequence, array or ScorePoint into a ScorePoint."""
    if isinstance(x, ScorePoint):
        return x
    if isinstance(x, BoundaryPoint):
        return x.point
    return ScorePoint(tuple(np.atleast_1d(np.asarray(x, dtype=float)).ravel()))


def parse_point(text):
    """Parse ``"0.1,-0.2"`` into a ScorePoint."""
    try:
        return ScorePoint(tuple(float(t) for t in str(text).split(",") if t.strip()))
    except ValueError as e:
        raise ConfigError(f"cannot parse score point {text!r}: {e}") from None


# ---------------------------------------------------------------------------
# Assignment rules
# ---------------------------------------------------------------------------

class AssignmentRule:
    """Base of the rule variants. Subclasses implement ``dim``,
    ``_assign_many`` and ``inward_normal``."""

    kind = ""

    @property
    def dim(self):
        raise NotImplementedError

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, self.dim) if self.dim == 1 else X.reshape(1, -1)
        if X.shape[1] != self.dim:
            raise DimensionError(
                f"{self.kind} rule is {self.dim}-dimensional, scores are {X.shape[1]}-dimensional"
            )
        return X

    def assign_many(self, X):
        """Vectorised assignment over an (n, d) score matrix."""
        return self._assign_many(self._check(X)).astype(np.int8)

    def _assign_many(self, X):
        raise NotImplementedError

    def inward_normal(self, x):
        """Unit vector at boundary point x pointing into the treated region."""
        raise NotImplementedError

    def negate(self):
        return ComplementRule(self)

    def to_dict(self):
        raise NotImplementedError


@dataclass(frozen=True)
class UnivariateThreshold(AssignmentRule):
    cutoff: float = 0.0
    kind = "threshold"

    @property
    def dim(self):
        return 1

    def _assign_many(self, X):
        return X[:, 0] >= self.cutoff

    def inward_normal(self, x):
        return np.array([1.0])

    def to_dict(self):
        return {"kind": self.kind, "cutoff": self.cutoff}


@dataclass(frozen=True)
class HalfPlane(AssignmentRule):
    normal: Tuple[float, ...]
    offset: float = 0.0
    kind = "half_plane"

    def __post_init__(self):
        normal = tuple(float(v) for v in self.normal)
        if not normal or not any(normal):
            raise ConfigError("half-plane normal must be a nonzero vector")
        object.__setattr__(self, "normal", normal)

    @property
    def dim(self):
        return len(self.normal)

    def _assign_many(self, X):
        return X @ np.asarray(self.normal) >= self.offset

    def inward_normal(self, x):
        n = np.asarray(self.normal)
        return n / np.linalg.norm(n)

    def to_dict(self):
        return {"kind": self.kind, "normal": list(self.normal), "offset": self.offset}


@dataclass(frozen=True)
class CurveBoundary(AssignmentRule):
    vertices: Tuple[Tuple[float, float], ...]
    treated_side: str = "below"
    kind = "curve"

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 2:
            raise ConfigError("curve boundary needs at least two 2-d vertices")
        dx = np.diff(v[:, 0])
        if np.all(dx < 0):
            v = v[::-1]
        elif not np.all(dx > 0):
            raise ConfigError("curve vertices must be strictly monotone in the first coordinate")
        if self.treated_side not in ("below", "above"):
            raise ConfigError(f"treated_side must be 'below' or 'above', got {self.treated_side!r}")
        object.__setattr__(self, "vertices", tuple((float(a), float(b)) for a, b in v))

    @property
    def dim(self):
        return 2

    def _segments(self, x1):
        v = np.asarray(self.vertices)
        idx = np.clip(np.searchsorted(v[:, 0], x1, side="right") - 1, 0, len(v) - 2)
        slope = (v[idx + 1, 1] - v[idx, 1]) / (v[idx + 1, 0] - v[idx, 0])
        return idx, slope

    def curve_value(self, x1):
        """g(x1) by linear interpolation, end segments extended."""
        v = np.asarray(self.vertices)
        x1 = np.asarray(x1, dtype=float)
        idx, slope = self._segments(x1)
        return v[idx, 1] + slope * (x1 - v[idx, 0])

    def _assign_many(self, X):
        g = self.curve_value(X[:, 0])
        if self.treated_side == "below":
            return X[:, 1] <= g
        return X[:, 1] >= g

    def inward_normal(self, x):
        _, slope = self._segments(np.asarray([as_point(x).coords[0]]))
        up = np.array([-slope[0], 1.0])
        up /= np.linalg.norm(up)
        return -up if self.treated_side == "below" else up

    def to_dict(self):
        return {
            "kind": self.kind,
            "vertices": [list(p) for p in self.vertices],
            "treated_side": self.treated_side,
        }


@dataclass(frozen=True)
class ComplementRule(AssignmentRule):
    base: AssignmentRule
    kind = "complement"

    @property
    def dim(self):
        return self.base.dim

    def _assign_many(self, X):
        return ~self.base._assign_many(X)

    def inward_normal(self, x):
        return -self.base.inward_normal(x)

    def negate(self):
        return self.base

    def to_dict(self):
        return {"kind": self.kind, "base": self.base.to_dict()}


_RULE_KEYS = {
    "threshold": {"cutoff"},
    "half_plane": {"normal", "offset"},
    "curve": {"vertices", "treated_side"},
    "complement": {"base"},
}


def rule_from_dict(spec):
    """Build a rule from its JSON form; unknown kinds or keys are ConfigError."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"rule must be an object with a 'kind', got {spec!r}")
    kind = spec["kind"]
    if kind not in _RULE_KEYS:
        raise ConfigError(f"unknown rule kind {kind!r}; expected one of {sorted(_RULE_KEYS)}")
    extra = set(spec) - _RULE_KEYS[kind] - {"kind"}
    if extra:
        raise ConfigError(f"unknown keys for {kind} rule: {sorted(extra)}")
    try:
        if kind == "threshold":
            return UnivariateThreshold(float(spec.get("cutoff", 0.0)))
        if kind == "half_plane":
            return HalfPlane(tuple(spec["normal"]), float(spec.get("offset", 0.0)))
        if kind == "curve":
            return CurveBoundary(
                tuple(tuple(p) for p in spec["vertices"]),
                spec.get("treated_side", "below"),
            )
        return ComplementRule(rule_from_dict(spec["base"]))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid {kind} rule: {e}") from None


def load_rule(path):
    try:
        with open(path, encoding="utf-8") as f:
            return rule_from_dict(json.load(f))
    except OSError as e:
        raise IoError(f"cannot read rule file {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"rule file {path} is not valid JSON: {e}") from None


def assign(rule, x):
    """1 if x lies in the treated region of rule, else 0."""
    p = as_point(x)
    if p.dim != rule.dim:
        raise DimensionError(f"{rule.kind} rule is {rule.dim}-dimensional, point is {p.dim}-dimensional")
    return int(rule.assign_many(p.array.reshape(1, -1))[0])


def _ball_probes(rng, center, radius, k):
    d = center.shape[0]
    direction = rng.standard_normal((k, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.random(k) ** (1.0 / d)
    return center + direction * r[:, None]


def probe_boundary(rule, x, radii=None, probes_per_radius=PROBES_PER_RADIUS, seed=0, scale=1.0):
    """Randomised check that every probed ball around x holds both classes."""
    if radii is None:
        radii = [r * scale for r in PROBE_RADII]
    radii = list(radii)
    if not radii:
        raise ConfigError("probe_boundary needs at least one radius")
    if any(r <= 0 for r in radii):
        raise ConfigError(f"probe radii must be positive, got {radii}")
    p = as_point(x)
    if p.dim != rule.dim:
        raise DimensionError(f"{rule.kind} rule is {rule.dim}-dimensional, point is {p.dim}-dimensional")
    rng = rng_for(seed, "probe")
    center = p.array
    for r in radii:
        labels = rule.assign_many(_ball_probes(rng, center, r, probes_per_radius))
        if labels.min() == labels.max():
            return False
    return True


def score_scale(x):
    """Largest per-coordinate range of a score matrix; 1 when the scores do not vary."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return 1.0
    span = float(np.max(np.ptp(x.reshape(x.shape[0], -1), axis=0)))
    return span if math.isfinite(span) and span > 0 else 1.0


@dataclass(frozen=True)
class BoundaryPoint:
    point: ScorePoint
    rule: AssignmentRule
    scale: float = field(default=1.0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "point", as_point(self.point))
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ConfigError(f"probe scale must be positive and finite, got {self.scale}")
        if not probe_boundary(self.rule, self.point, scale=self.scale):
            raise BoundaryError(f"({self.point}) is not on the {self.rule.kind} treatment boundary")


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledSample:
    y: float
    x: ScorePoint
    d: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """n rows of (y, x, d); arrays are read-only after construction."""

    y: np.ndarray
    x: np.ndarray
    d: np.ndarray
    rule: Optional[AssignmentRule] = field(default=None)

    def __post_init__(self):
        y = np.array(self.y, dtype=float).ravel()
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        d = np.array(self.d, dtype=np.int8).ravel()
        if y.shape[0] < 1:
            raise ConfigError("a dataset needs at least one row")
        if x.shape[0] != y.shape[0] or d.shape[0] != y.shape[0]:
            raise DimensionError(f"row counts disagree: y={y.shape[0]}, x={x.shape[0]}, d={d.shape[0]}")
        if not np.all(np.isfinite(x)):
            raise DimensionError("scores must be finite")
        if not np.all((d == 0) | (d == 1)):
            raise ConfigError("treatment labels must be 0 or 1")
        if self.rule is not None:
            if self.rule.dim != x.shape[1]:
                raise DimensionError(f"rule is {self.rule.dim}-dimensional, data is {x.shape[1]}-dimensional")
            bad = np.flatnonzero(self.rule.assign_many(x) != d)
            if bad.size:
                raise ConfigError(f"treatment labels disagree with the rule on {bad.size} rows (first: row {bad[0]})")
        for name, arr in (("y", y), ("x", x), ("d", d)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_arrays(cls, y, x, d=None, rule=None):
        """Build a dataset; labels are derived from ``rule`` when ``d`` is omitted."""
        if d is None:
            if rule is None:
                raise ConfigError("treatment labels need either a d column or a rule")
            d = rule.assign_many(np.asarray(x, dtype=float).reshape(len(np.atleast_1d(y)), -1))
        return cls(y, x, d, rule)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]

    def __len__(self):
        return self.n

    @property
    def rows(self):
        return [
            LabeledSample(float(self.y[i]), ScorePoint(tuple(self.x[i])), int(self.d[i]))
            for i in range(self.n)
        ]

    def subset(self, mask):
        idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
        return Dataset(self.y[idx], self.x[idx], self.d[idx], self.rule)

    def with_outcomes(self, y):
        return Dataset(y, self.x, self.d, self.rule)


def split_by_treatment(data, rule):
    """(treated rows, control rows) under rule, row order preserved."""
    if rule.dim != data.dim:
        raise DimensionError(f"rule is {rule.dim}-dimensional, data is {data.dim}-dimensional")
    treated = rule.assign_many(data.x).astype(bool)
    if treated.all():
        raise EmptySideError("every row is treated; the control side is empty")
    if not treated.any():
        raise EmptySideError("no row is treated; the treated side is empty")
    return data.subset(treated), data.subset(~treated)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def read_dataset_csv(path, rule=None):
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IoError(f"cannot read dataset {path}: {e}") from None
    cols = list(frame.columns)
    has_d = bool(cols) and cols[-1] == "d"
    xcols = cols[1:-1] if has_d else cols[1:]
    expected = [f"x{j + 1}" for j in range(len(xcols))]
    if not cols or cols[0] != "y" or not xcols or xcols != expected:
        raise ConfigError(f"dataset header must be y,x1,...,xd[,d]; got {','.join(map(str, cols))}")
    y = frame["y"].to_numpy(dtype=float)
    x = frame[xcols].to_numpy(dtype=float)
    d = frame["d"].to_numpy() if has_d else None
    return Dataset.from_arrays(y, x, d, rule)


def dataset_frame(data):
    frame = pd.DataFrame({"y": data.y})
    for j in range(data.dim):
        frame[f"x{j + 1}"] = data.x[:, j]
    frame["d"] = data.d.astype(int)
    return frame


def write_dataset_csv(data, path):
    try:
        dataset_frame(data).to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise IoError(f"cannot write dataset {path}: {e}") from None


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def z_value(level):
    if not 0.0 < level < 1.0:
        raise ConfigError(f"confidence level must lie in (0, 1), got {level}")
    return float(stats.norm.ppf(0.5 + level / 2.0))


@dataclass(frozen=True)
class EstimateReport:
    estimate: float
    std_error: float
    level: float
    ci_lower: float
    ci_upper: float
    n_treated: int
    n_control: int
    method: str = ""
    details: dict = field(default_factory=dict, compare=False)

    @classmethod
    def build(cls, estimate, std_error, level, n_treated, n_control, method="", details=None):
        if not std_error >= 0.0:
            raise ConfigError(f"standard error must be nonnegative, got {std_error}")
        half = z_value(level) * std_error
        return cls(
            float(estimate), float(std_error), float(level),
            float(estimate - half), float(estimate + half),
            int(n_treated), int(n_control), method, dict(details or {}),
        )

    def covers(self, value):
        return self.ci_lower <= value <= self.ci_upper

    def to_dict(self):
        return {
            "method": self.method,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "level": self.level,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "n_treated": self.n_treated,
            "n_control": self.n_control,
            "details": self.details,
        }
