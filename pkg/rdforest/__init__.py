__version__ = "0.1.0"

from .dgp_suite import DGP_DISPLAY_NAME_MAPPINGS as _n2
from .dgp_suite import DGP_PRESET_MAPPINGS as _m2
from .dgp_suite import DGPSpec, preset, simulate, true_effect
from .domain_core import (
    BoundaryPoint,
    ComplementRule,
    CurveBoundary,
    Dataset,
    EstimateReport,
    HalfPlane,
    ScorePoint,
    UnivariateThreshold,
    assign,
    probe_boundary,
)
from .errors import RDForestError
from .honest_forest import ForestConfig, forest_weights, grow_forest, llf_predict, rf_predict
from .mc_harness import MCConfig, MCResult, emit_table, run_mc
from .rd_estimators import METHOD_CLASS_MAPPINGS as _m1
from .rd_estimators import METHOD_DISPLAY_NAME_MAPPINGS as _n1
from .rd_estimators import RDMethodConfig, buffered_eval_points, estimate_at, fit_rd
from .score_transform import CollapseSpec, collapse, zero_density_diagnostic

METHOD_CLASS_MAPPINGS = {**_m1}
METHOD_DISPLAY_NAME_MAPPINGS = {**_n1}
DGP_PRESET_MAPPINGS = {**_m2}
DGP_DISPLAY_NAME_MAPPINGS = {**_n2}

__all__ = [
    "METHOD_CLASS_MAPPINGS",
    "METHOD_DISPLAY_NAME_MAPPINGS",
    "DGP_PRESET_MAPPINGS",
    "DGP_DISPLAY_NAME_MAPPINGS",
    "BoundaryPoint",
    "CollapseSpec",
    "ComplementRule",
    "CurveBoundary",
    "DGPSpec",
    "Dataset",
    "EstimateReport",
    "ForestConfig",
    "HalfPlane",
    "MCConfig",
    "MCResult",
    "RDForestError",
    "RDMethodConfig",
    "ScorePoint",
    "UnivariateThreshold",
    "assign",
    "buffered_eval_points",
    "collapse",
    "emit_table",
    "estimate_at",
    "fit_rd",
    "forest_weights",
    "grow_forest",
    "llf_predict",
    "preset",
    "probe_boundary",
    "rf_predict",
    "run_mc",
    "simulate",
    "true_effect",
    "zero_density_diagnostic",
]
