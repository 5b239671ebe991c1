"""
Monte Carlo replication engine: bias, variance and coverage of RD estimators
over a grid of methods and sample sizes.

For every sample size n and replication r the dataset is simulated with seed
derive_seed(master_seed, n, r), so every method sees the same R datasets.
Per (method, n) cell, over the successful replications:

    mean_bias       mean(tau_hat) - tau
    variance        sample variance of tau_hat (ddof=1; 0 for one success)
    coverage        share of intervals containing tau
    mean_ci_length  mean(ci_upper - ci_lower)
    failures        replications that raised a library error

A method is anything callable as ``method(data, x_c, seed) -> EstimateReport``
with a ``label``; RDMethodConfig entries are turned into estimators.
"""

import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .config import METHOD_PARAMS, STUDY_KEYS, default_of
from .dgp_suite import DGPSpec, dgp_from_dict, simulate, true_effect
from .domain_core import BoundaryPoint, as_point, parse_point
from .errors import ConfigError, HarnessError, IoError, RDForestError
from .rd_estimators import RDMethodConfig, estimator_for, method_config_from_dict
from .seeding import derive_seed

logger = logging.getLogger(__name__)

COLUMNS = ("method", "n", "mean_bias", "variance", "coverage", "mean_ci_length", "failures", "wall_time")
FORMATS = ("csv", "json")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _label(method):
    return getattr(method, "label", None) or getattr(method, "__name__", None) or type(method).__name__


@dataclass(frozen=True)
class MCConfig:
    dgp: object
    boundary_point: object
    methods: Tuple[object, ...]
    sample_sizes: Tuple[int, ...]
    replications: int
    master_seed: int = 0
    level: float = default_of(METHOD_PARAMS, "level")

    def __post_init__(self):
        dgp = self.dgp
        if isinstance(dgp, (str, dict)):
            dgp = dgp_from_dict(dgp)
        if not isinstance(dgp, DGPSpec):
            raise ConfigError(f"dgp must be a DGPSpec or preset name, got {dgp!r}")
        object.__setattr__(self, "dgp", dgp)
        object.__setattr__(self, "boundary_point", as_point(self.boundary_point))
        if self.replications < 2:
            raise ConfigError(f"replications must be at least 2, got {self.replications}")
        sizes = tuple(int(n) for n in self.sample_sizes)
        if not sizes or any(n < 1 for n in sizes):
            raise ConfigError(f"sample sizes must be positive, got {list(self.sample_sizes)}")
        object.__setattr__(self, "sample_sizes", sizes)
        methods = tuple(self.methods)
        if not methods:
            raise ConfigError("a study needs at least one method")
        labels = [_label(m) for m in methods]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"method labels must be unique, got {labels}; set 'name' to tell them apart")
        object.__setattr__(self, "methods", methods)

    def estimators(self):
        return [estimator_for(m) if isinstance(m, RDMethodConfig) else m for m in self.methods]


def study_from_dict(spec, seed=None):
    """MCConfig from a study JSON object; unknown keys are rejected."""
    if not isinstance(spec, dict):
        raise ConfigError(f"study must be an object, got {type(spec).__name__}")
    unknown = set(spec) - set(STUDY_KEYS)
    if unknown:
        raise ConfigError(f"unknown study keys {sorted(unknown)}")
    missing = [k for k in ("dgp", "boundary_point", "methods", "sample_sizes", "replications") if k not in spec]
    if missing:
        raise ConfigError(f"study is missing {missing}")
    level = spec.get("level", default_of(METHOD_PARAMS, "level"))
    master = int(spec.get("seed", 0) if seed is None else seed)
    point = spec["boundary_point"]
    point = parse_point(point) if isinstance(point, str) else as_point(point)
    if not isinstance(spec["methods"], list):
        raise ConfigError("study methods must be a list")
    methods = [method_config_from_dict(m, f"methods[{i}].", level=level) for i, m in enumerate(spec["methods"])]
    if not isinstance(spec["sample_sizes"], list) or not all(isinstance(n, int) for n in spec["sample_sizes"]):
        raise ConfigError("sample_sizes must be a list of integers")
    if not isinstance(spec["replications"], int):
        raise ConfigError("replications must be an integer")
    return MCConfig(dgp_from_dict(spec["dgp"]), point, tuple(methods), tuple(spec["sample_sizes"]),
                    spec["replications"], master, level)


def load_study(path, seed=None):
    try:
        with open(path, encoding="utf-8") as f:
            return study_from_dict(json.load(f), seed)
    except OSError as e:
        raise IoError(f"cannot read study file {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"study file {path} is not valid JSON: {e}") from None


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MCRow:
    method: str
    n: int
    mean_bias: float
    variance: float
    coverage: float
    mean_ci_length: float
    failures: int
    wall_time: Optional[float] = None

    @property
    def squared_bias(self):
        return self.mean_bias**2

    @property
    def mse(self):
        return self.squared_bias + self.variance

    @property
    def rmse(self):
        return math.sqrt(self.mse)


@dataclass(frozen=True)
class MCResult:
    rows: Tuple[MCRow, ...]
    truth: float
    replications: int

    def row(self, method, n):
        for r in self.rows:
            if r.method == method and r.n == n:
                return r
        raise KeyError((method, n))

    def to_dict(self):
        return {"truth": self.truth, "replications": self.replications, "rows": [asdict(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, payload):
        try:
            rows = tuple(MCRow(**{k: r[k] for k in COLUMNS}) for r in payload["rows"])
            return cls(rows, float(payload["truth"]), int(payload["replications"]))
        except (KeyError, TypeError) as e:
            raise ConfigError(f"not an MC result: {e}") from None


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------

def _replicate(dgp, n, r, master_seed, x_c, estimators, timing):
    seed = derive_seed(master_seed, n, r)
    data = simulate(dgp, n, seed)
    out = []
    for k, method in enumerate(estimators):
        start = time.perf_counter() if timing else None
        try:
            report = method(data, x_c, derive_seed(seed, "method", k))
            got = (report.estimate, report.ci_lower, report.ci_upper)
        except RDForestError as e:
            logger.debug("replication %d (n=%d) failed for %s: %s", r, n, _label(method), e)
            got = None
        out.append((got, time.perf_counter() - start if timing else None))
    return out


def _summarise(label, n, results, truth, timing):
    ok = [g for g, _ in results if g is not None]
    failures = len(results) - len(ok)
    if not ok:
        raise HarnessError(f"every replication failed for {label} at n={n}")
    if failures:
        logger.warning("%s at n=%d: %d of %d replications failed", label, n, failures, len(results))
    est = np.array([g[0] for g in ok])
    lo = np.array([g[1] for g in ok])
    hi = np.array([g[2] for g in ok])
    return MCRow(
        method=label,
        n=n,
        mean_bias=float(est.mean() - truth),
        variance=float(est.var(ddof=1)) if est.size > 1 else 0.0,
        coverage=float(np.mean((lo <= truth) & (truth <= hi))),
        mean_ci_length=float(np.mean(hi - lo)),
        failures=failures,
        wall_time=float(sum(t for _, t in results)) if timing else None,
    )


def run_mc(config, n_jobs=1, timing=False):
    """Run every (method, n) cell; results do not depend on n_jobs."""
    x_c = BoundaryPoint(config.boundary_point, config.dgp.rule)
    truth = true_effect(config.dgp, x_c.point)
    estimators = config.estimators()
    rows = []
    for n in config.sample_sizes:
        jobs = (
            delayed(_replicate)(config.dgp, n, r, config.master_seed, x_c, estimators, timing)
            for r in range(config.replications)
        )
        if n_jobs == 1:
            per_rep = [fn(*args, **kw) for fn, args, kw in jobs]
        else:
            per_rep = Parallel(n_jobs=n_jobs)(jobs)
        for k, method in enumerate(estimators):
            rows.append(_summarise(_label(method), n, [rep[k] for rep in per_rep], truth, timing))
        logger.info("n=%d done (%d replications, %d methods)", n, config.replications, len(estimators))
    return MCResult(tuple(rows), float(truth), config.replications)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def result_frame(result):
    return pd.DataFrame([[getattr(r, c) for c in COLUMNS] for r in result.rows], columns=list(COLUMNS))


def emit_table(result, fmt="csv"):
    """Serialise a result; CSV keeps full precision and '.' decimals."""
    if fmt not in FORMATS:
        raise ConfigError(f"unknown table format {fmt!r}; expected one of {list(FORMATS)}")
    if not result.rows:
        raise HarnessError("cannot emit an empty result")
    if fmt == "json":
        return (json.dumps(result.to_dict(), indent=2) + "\n").encode("utf-8")
    buf = io.StringIO()
    result_frame(result).to_csv(buf, index=False, lineterminator="\n", na_rep="")
    return buf.getvalue().encode("utf-8")


def write_table(result, path, fmt="csv"):
    payload = emit_table(result, fmt)
    try:
        with open(path, "wb") as f:
            f.write(payload)
    except OSError as e:
        raise IoError(f"cannot write results to {path}: {e}") from None


def read_result_json(payload):
    if isinstance(payload, bytes):
        payload = payload.decode("utf-8")
    try:
        return MCResult.from_dict(json.loads(payload))
    except json.JSONDecodeError as e:
        raise ConfigError(f"result is not valid JSON: {e}") from None


def format_table(result):
    """Aligned text table with 6 significant digits."""
    header = ["method", "n", "bias", "variance", "mse", "coverage", "ci_length", "failures"]
    lines = [[r.method, str(r.n)] + [f"{v:.6g}" for v in (r.mean_bias, r.variance, r.mse, r.coverage, r.mean_ci_length)]
             + [str(r.failures)] for r in result.rows]
    widths = [max(len(row[i]) for row in [header] + lines) for i in range(len(header))]
    out = [f"truth = {result.truth:.6g}, replications = {result.replications}"]
    for row in [header] + lines:
        out.append("  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(row, widths))))
    return "\n".join(out)
