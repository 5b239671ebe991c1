"""
Honest subsampled regression forests and local linear forests.

Growing
-------
The B trees are grown in G = B / ci_group_size little bags. Each bag draws a
half-sample of the training rows; each of its trees draws a subsample of
size s from that half-sample and splits it into

    I-half  (honesty_fraction · s rows)  places the splits
    J-half  (the rest)                   populates the leaves

At a node, mtry features are drawn without replacement. Candidate thresholds
are midpoints between consecutive distinct I-half values; a candidate is
admissible when each child keeps at least alpha of the node's I-half and at
least min_node_size J-half members. The admissible split with the largest
I-half variance reduction wins (ties go to the smaller threshold, then the
smaller feature index). No admissible split -> leaf. With the
ridge_residual rule the I-half responses are first replaced by the
residuals of a ridge regression on the node's scores.

Subsample size (beta lower bounds for asymptotic normality)
-----------------------------------------------------------
    rf:   beta = (1 + mtry·log(1-alpha) / (d·log(alpha)))^-1
    llf:  beta = 1 - (1 + d/(1.3·mtry) · log(alpha)/log(1-alpha))^-1
    s    = min(n - 1, round_half_up(c · ceil(n^beta)))

Prediction at x
---------------
    W_i      = 1/B' Σ_b 1{i ∈ L_b(x)} / |L_b(x)|       (B' trees with a nonempty leaf)
    rf(x)    = Σ_i W_i Y_i
    llf(x)   = e1' argmin Σ_i W_i (Y_i - b0 - b1'(X_i - x))² + λ ||b1||²

Variance (bootstrap of little bags)
-----------------------------------
    sigma² = max(floor, V_between - V_within / ci_group_size)

over tree-level predictions. For llf the tree-level quantities are forest
means of the linearised ridge-fit influence terms (delta method).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
from joblib import Parallel, delayed

from .config import FOREST_PARAMS, default_of
from .domain_core import as_point
from .errors import ConfigError, DimensionError, PredictionError, SingularDesignError
from .seeding import rng_for

logger = logging.getLogger(__name__)

LLF_SPLIT_SHRINKAGE = 1.3
LAMBDA_GRID = (0.01, 0.1, 1.0, 10.0)
VARIANCE_FLOOR = 1e-12
_GAIN_TOLERANCE = 1e-12


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ForestConfig:
    num_trees: int = default_of(FOREST_PARAMS, "num_trees")
    mtry: int = default_of(FOREST_PARAMS, "mtry")
    min_node_size: Union[int, float] = default_of(FOREST_PARAMS, "min_node_size")
    alpha: float = default_of(FOREST_PARAMS, "alpha")
    honesty_fraction: float = default_of(FOREST_PARAMS, "honesty_fraction")
    c_scale: float = default_of(FOREST_PARAMS, "c_scale")
    sample_fraction: Optional[float] = None
    split_rule: str = "cart"
    ridge_lambda: Union[float, str] = default_of(FOREST_PARAMS, "ridge_lambda")
    weight_penalty: bool = default_of(FOREST_PARAMS, "weight_penalty")
    ci_group_size: int = default_of(FOREST_PARAMS, "ci_group_size")
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.ci_group_size < 2:
            raise ConfigError(f"ci_group_size must be at least 2, got {self.ci_group_size}")
        if self.num_trees < self.ci_group_size or self.num_trees % self.ci_group_size:
            raise ConfigError(
                f"num_trees ({self.num_trees}) must be a positive multiple of ci_group_size ({self.ci_group_size})"
            )
        if self.mtry < 1:
            raise ConfigError(f"mtry must be at least 1, got {self.mtry}")
        if not (self.min_node_size >= 1 and (float(self.min_node_size).is_integer() or math.isinf(self.min_node_size))):
            raise ConfigError(f"min_node_size must be a positive integer or inf, got {self.min_node_size}")
        if not 0 < self.alpha <= 0.5:
            raise ConfigError(f"alpha must lie in (0, 0.5], got {self.alpha}")
        if not 0 < self.honesty_fraction < 1:
            raise ConfigError(f"honesty_fraction must lie in (0, 1), got {self.honesty_fraction}")
        if not 0.05 <= self.c_scale <= 0.5:
            raise ConfigError(f"c_scale must lie in [0.05, 0.5], got {self.c_scale}")
        if self.sample_fraction is not None and not 0 < self.sample_fraction <= 0.5:
            raise ConfigError(f"sample_fraction must lie in (0, 0.5], got {self.sample_fraction}")
        if self.split_rule not in ("cart", "ridge_residual"):
            raise ConfigError(f"unknown split rule {self.split_rule!r}")
        if self.ridge_lambda != "auto" and not (isinstance(self.ridge_lambda, (int, float)) and self.ridge_lambda >= 0):
            raise ConfigError(f"ridge_lambda must be a nonnegative number or 'auto', got {self.ridge_lambda!r}")
        if self.n_jobs < 1:
            raise ConfigError(f"n_jobs must be at least 1, got {self.n_jobs}")

    @property
    def num_groups(self):
        return self.num_trees // self.ci_group_size

    @property
    def split_lambda(self):
        return LAMBDA_GRID[1] if self.ridge_lambda == "auto" else float(self.ridge_lambda)


def beta_min(d, mtry, alpha, variant):
    if variant == "rf":
        return 1.0 / (1.0 + mtry * math.log(1.0 - alpha) / (d * math.log(alpha)))
    if variant == "llf":
        return 1.0 - 1.0 / (1.0 + d / (LLF_SPLIT_SHRINKAGE * mtry) * math.log(alpha) / math.log(1.0 - alpha))
    raise ConfigError(f"unknown forest variant {variant!r}; expected 'rf' or 'llf'")


def subsample_size(n, d, mtry, alpha, c, variant):
    """Subsample size s = min(n-1, c·ceil(n^beta)) rounded half up."""
    if n < 2:
        raise ConfigError(f"need at least 2 observations, got {n}")
    if not 1 <= mtry <= d:
        raise ConfigError(f"mtry must lie in [1, {d}], got {mtry}")
    if not 0 < alpha < 0.5:
        raise ConfigError(f"alpha must lie in (0, 0.5), got {alpha}")
    if not 0.05 <= c <= 0.5:
        raise ConfigError(f"c must lie in [0.05, 0.5], got {c}")
    beta = beta_min(d, mtry, alpha, variant)
    return int(min(n - 1, math.floor(c * math.ceil(n**beta) + 0.5)))


# ---------------------------------------------------------------------------
# Trees
# ---------------------------------------------------------------------------

@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = math.nan
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    members: Optional[np.ndarray] = None

    @property
    def is_leaf(self):
        return self.left is None


@dataclass
class HonestTree:
    root: TreeNode
    subsample: np.ndarray
    split_idx: np.ndarray
    est_idx: np.ndarray

    @property
    def is_honest(self):
        return np.intersect1d(self.split_idx, self.est_idx).size == 0

    def leaf(self, x):
        node = self.root
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node

    def leaves(self):
        stack, out = [self.root], []
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.extend((node.right, node.left))
        return out


def _penalty(X, w, lam, weight_penalty):
    if weight_penalty:
        mean = w @ X / w.sum()
        scale = w @ (X - mean) ** 2 / w.sum()
        scale = np.where(scale > 0, scale, 1.0)
    else:
        scale = np.ones(X.shape[1])
    return np.concatenate([[0.0], lam * scale])


def _ridge_residuals(X, y, lam, weight_penalty):
    m = len(y)
    Z = np.column_stack([np.ones(m), X - X.mean(axis=0)])
    w = np.full(m, 1.0 / m)
    A = Z.T @ (w[:, None] * Z) + np.diag(_penalty(X, w, lam, weight_penalty))
    b = Z.T @ (w * y)
    try:
        coef = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        coef = np.linalg.lstsq(A, b, rcond=None)[0]
    return y - Z @ coef


def _best_split(X, y, I, J, features, config):
    """(feature, threshold) of the best admissible split, or None."""
    resp = y[I]
    if config.split_rule == "ridge_residual":
        resp = _ridge_residuals(X[I], resp, config.split_lambda, config.weight_penalty)
    m = len(I)
    tol = _GAIN_TOLERANCE * m * float(np.mean(y[I] ** 2))
    best, best_gain = None, tol
    for f in sorted(features):
        xi = X[I, f]
        order = np.argsort(xi, kind="stable")
        xs = xi[order]
        rc = resp[order] - resp.mean()
        k = np.flatnonzero(xs[:-1] < xs[1:])
        if k.size == 0:
            continue
        n_left = k + 1
        n_right = m - n_left
        thresholds = 0.5 * (xs[k] + xs[k + 1])
        s_left = np.cumsum(rc)[k]
        gain = s_left**2 * m / (n_left * n_right)
        xj = np.sort(X[J, f])
        j_left = np.searchsorted(xj, thresholds, side="right")
        ok = (
            (n_left >= config.alpha * m)
            & (n_right >= config.alpha * m)
            & (j_left >= config.min_node_size)
            & (len(J) - j_left >= config.min_node_size)
        )
        if not ok.any():
            continue
        gain = np.where(ok, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best_gain:
            best, best_gain = (f, float(thresholds[i])), gain[i]
    return best


def grow_tree(data, subsample, config, rng):
    """One honest tree on ``subsample`` (indices into data)."""
    X, y = (data.x, data.y) if hasattr(data, "x") else data
    subsample = np.asarray(subsample)
    s = subsample.size
    if s < 2:
        raise ConfigError(f"a subsample of {s} rows cannot be split into honest halves")
    if math.isfinite(config.min_node_size) and s < 2 * config.min_node_size:
        raise ConfigError(f"subsample of {s} rows is smaller than 2 * min_node_size ({config.min_node_size})")
    d = X.shape[1]
    if config.mtry > d:
        raise ConfigError(f"mtry ({config.mtry}) exceeds the score dimension ({d})")
    perm = rng.permutation(subsample)
    n_split = min(s - 1, max(1, int(round(config.honesty_fraction * s))))
    split_idx, est_idx = np.sort(perm[:n_split]), np.sort(perm[n_split:])

    root = TreeNode()
    stack = [(root, split_idx, est_idx)]
    while stack:
        node, I, J = stack.pop()
        split = None
        if I.size >= 2 and J.size >= 2 * config.min_node_size:
            features = rng.choice(d, size=config.mtry, replace=False)
            split = _best_split(X, y, I, J, features, config)
        if split is None:
            node.members = J
            continue
        f, thr = split
        node.feature, node.threshold = f, thr
        node.left, node.right = TreeNode(), TreeNode()
        stack.append((node.right, I[X[I, f] > thr], J[X[J, f] > thr]))
        stack.append((node.left, I[X[I, f] <= thr], J[X[J, f] <= thr]))
    return HonestTree(root, np.sort(subsample), split_idx, est_idx)


# ---------------------------------------------------------------------------
# Forests
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class FittedForest:
    trees: List[HonestTree]
    X: np.ndarray
    y: np.ndarray
    config: ForestConfig
    subsample_size: int
    half_samples: List[np.ndarray] = field(repr=False)

    @property
    def num_groups(self):
        return len(self.trees) // self.config.ci_group_size

    @property
    def dim(self):
        return self.X.shape[1]

    def group_of(self, b):
        return b // self.config.ci_group_size


def _grow_group(X, y, config, g, s, half_size):
    rng = rng_for(config.seed, "group", g)
    half = np.sort(rng.choice(X.shape[0], size=half_size, replace=False))
    trees = []
    for j in range(config.ci_group_size):
        b = g * config.ci_group_size + j
        tree_rng = rng_for(config.seed, "tree", b)
        sub = tree_rng.choice(half, size=s, replace=False)
        trees.append(grow_tree((X, y), sub, config, tree_rng))
    return half, trees


def grow_forest(data, config, s=None, variant="rf"):
    """Fit B honest trees in little bags on a dataset (or an (X, y) pair)."""
    X, y = (np.asarray(data.x), np.asarray(data.y)) if hasattr(data, "x") else data
    n, d = X.shape
    if config.mtry > d:
        raise ConfigError(f"mtry ({config.mtry}) exceeds the score dimension ({d})")
    if s is None:
        if config.sample_fraction is not None:
            s = int(math.floor(config.sample_fraction * n))
        else:
            s = subsample_size(n, d, config.mtry, config.alpha, config.c_scale, variant)
    half_size = n // 2
    if s > half_size:
        logger.warning("subsample size %d exceeds the half-sample (%d rows); using %d", s, half_size, half_size)
        s = half_size
    if s < 2:
        raise ConfigError(f"{n} training rows give a subsample of {s}; at least 2 are needed")
    jobs = [delayed(_grow_group)(X, y, config, g, s, half_size) for g in range(config.num_groups)]
    if config.n_jobs == 1:
        groups = [fn(*args, **kw) for fn, args, kw in jobs]
    else:
        groups = Parallel(n_jobs=config.n_jobs)(jobs)
    logger.debug("grew %d trees on %d rows (s=%d, seed=%s)", config.num_trees, n, s, config.seed)
    return FittedForest(
        trees=[t for _, trees in groups for t in trees],
        X=X,
        y=y,
        config=config,
        subsample_size=s,
        half_samples=[half for half, _ in groups],
    )


def _point(forest, x):
    p = as_point(x)
    if p.dim != forest.dim:
        raise DimensionError(f"forest is {forest.dim}-dimensional, point is {p.dim}-dimensional")
    return p.array


def _leaf_members(forest, x):
    xa = _point(forest, x)
    return [tree.leaf(xa).members for tree in forest.trees]


def forest_weights(forest, x):
    """Probability vector over training rows (co-occupancy of x's leaves)."""
    w = np.zeros(forest.X.shape[0])
    used = 0
    for members in _leaf_members(forest, x):
        if members is None or members.size == 0:
            continue
        w[members] += 1.0 / members.size
        used += 1
    if used == 0:
        raise PredictionError("every tree has an empty leaf at this point")
    return w / used


def tree_predictions(forest, x, values=None):
    """Per-tree leaf means of ``values`` (default: outcomes); NaN for empty leaves."""
    values = forest.y if values is None else values
    out = np.full(len(forest.trees), np.nan)
    for b, members in enumerate(_leaf_members(forest, x)):
        if members is not None and members.size:
            out[b] = values[members].mean()
    return out


def rf_predict(forest, x):
    return float(forest_weights(forest, x) @ forest.y)


def _llf_system(forest, x, w, lam):
    xa = _point(forest, x)
    support = w > 0
    Xs = forest.X[support]
    Z = np.column_stack([np.ones(Xs.shape[0]), Xs - xa])
    ws = w[support]
    A = Z.T @ (ws[:, None] * Z) + np.diag(_penalty(Xs, ws, lam, forest.config.weight_penalty))
    b = Z.T @ (ws * forest.y[support])
    if np.linalg.matrix_rank(A) < A.shape[0]:
        raise SingularDesignError("forest-weighted local linear design is singular; use lambda > 0")
    return support, Z, ws, A, np.linalg.solve(A, b)


def select_lambda(forest, x, grid=LAMBDA_GRID, weights=None):
    """Grid value with the smallest forest-weighted leave-one-out error at x."""
    w = forest_weights(forest, x) if weights is None else weights
    best, best_err = None, math.inf
    for lam in grid:
        try:
            support, Z, ws, A, coef = _llf_system(forest, x, w, lam)
        except SingularDesignError:
            continue
        resid = forest.y[support] - Z @ coef
        hat = ws * np.einsum("ij,ji->i", Z, np.linalg.solve(A, Z.T))
        ok = hat < 1.0 - 1e-8
        if not ok.any():
            continue
        err = float(np.sum(ws[ok] * (resid[ok] / (1.0 - hat[ok])) ** 2) / ws[ok].sum())
        if err < best_err:
            best, best_err = lam, err
    if best is None:
        raise SingularDesignError("no lambda on the grid gives a solvable local linear fit")
    return best


def _resolve_lambda(forest, x, lam, w):
    lam = forest.config.ridge_lambda if lam is None else lam
    if lam == "auto":
        lam = select_lambda(forest, x, weights=w)
    if lam < 0:
        raise ConfigError(f"lambda must be nonnegative, got {lam}")
    return float(lam)


def llf_predict(forest, x, lam=None):
    """Forest-weighted ridge local linear fit at x; returns the intercept."""
    w = forest_weights(forest, x)
    _, _, _, _, coef = _llf_system(forest, x, w, _resolve_lambda(forest, x, lam, w))
    return float(coef[0])


def _llf_pseudo_outcomes(forest, x, lam):
    w = forest_weights(forest, x)
    lam = _resolve_lambda(forest, x, lam, w)
    _, _, _, A, coef = _llf_system(forest, x, w, lam)
    Z = np.column_stack([np.ones(forest.X.shape[0]), forest.X - _point(forest, x)])
    rows = np.linalg.solve(A, Z.T)[0]
    return rows * (forest.y - Z @ coef)


def little_bags_from_tree_predictions(preds, floor=0.0):
    """Bootstrap-of-little-bags variance from a (groups, group_size) matrix.

    NaN entries (trees with an empty leaf) are ignored.
    """
    preds = np.asarray(preds, dtype=float)
    if preds.ndim != 2 or preds.shape[1] < 2:
        raise ConfigError("tree predictions must be a (groups, group_size >= 2) matrix")
    finite = np.isfinite(preds)
    counts = finite.sum(axis=1)
    if np.count_nonzero(counts) < 2:
        raise ConfigError("little-bags variance needs at least two groups with predictions")
    filled = np.where(finite, preds, 0.0)
    means = filled[counts > 0].sum(axis=1) / counts[counts > 0]
    v_between = float(np.var(means, ddof=1))
    full = counts >= 2
    within = [np.var(filled[g][finite[g]], ddof=1) for g in np.flatnonzero(full)]
    v_within = float(np.mean(within)) if within else 0.0
    return max(floor, v_between - v_within / preds.shape[1])


def little_bags_variance(forest, x, predictor="rf", lam=None):
    if forest.num_groups < 2:
        raise ConfigError(f"little-bags variance needs at least 2 groups, forest has {forest.num_groups}")
    if predictor == "rf":
        values = forest.y
    elif predictor == "llf":
        values = _llf_pseudo_outcomes(forest, x, lam)
    else:
        raise ConfigError(f"unknown predictor {predictor!r}; expected 'rf' or 'llf'")
    preds = tree_predictions(forest, x, values).reshape(forest.num_groups, forest.config.ci_group_size)
    scale = float(np.max(np.abs(forest.y))) if forest.y.size else 0.0
    return little_bags_from_tree_predictions(preds, VARIANCE_FLOOR * scale**2)
