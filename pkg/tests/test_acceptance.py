"""Desk-scale reproductions and analytic checks of the whole pipeline.

Tests marked ``slow`` run the scaled Lee study (minutes on a few cores) and
are deselected by default; run them with ``pytest -m slow``.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest
from joblib import cpu_count

from rdforest.dgp_suite import preset, sample_scores
from rdforest.domain_core import Dataset
from rdforest.honest_forest import beta_min
from rdforest.mc_harness import emit_table, run_mc, study_from_dict
from rdforest.score_transform import (
    CollapseSpec,
    analytic_density_gaussian,
    analytic_density_uniform,
    collapse,
    gaussian_density,
    prop1_marginal_by_quadrature,
    uniform_square_density,
    zero_density_diagnostic,
)

from run_study import run

STUDY = Path(__file__).with_name("lee-forest-study.json")


class TestZeroDensity:
    def test_collapsed_square_mass_near_zero(self):
        spec = preset("bivariate")
        x = sample_scores(spec, 4_000_000, seed=0)
        data = Dataset.from_arrays(np.zeros(len(x)), x, rule=spec.rule)
        scores = collapse(data, CollapseSpec((0.0, 0.0), spec.rule)).x[:, 0]
        e = np.abs(scores)
        expected = math.pi * 0.05**2 / 4
        assert abs(np.mean(e <= 0.05) - expected) < 0.05 * expected
        assert zero_density_diagnostic(scores).flagged


class TestQuadrature:
    def test_both_joints_fast_and_exact(self):
        start = time.perf_counter()
        for e in (0.25, 0.5, 0.9):
            uniform = prop1_marginal_by_quadrature(uniform_square_density, (0.0, 0.0), e, nodes=512)
            gaussian = prop1_marginal_by_quadrature(gaussian_density(1.0), (0.0, 0.0), e, nodes=512)
            assert abs(uniform - analytic_density_uniform(e)) < 1e-6
            assert abs(gaussian - analytic_density_gaussian(e, 1.0)) < 1e-6
        assert time.perf_counter() - start < 1.0


class TestHyperparameters:
    def test_beta_rules(self):
        assert abs(beta_min(1, 1, 0.05, "rf") - 0.983166) < 1e-6
        assert abs(beta_min(1, 1, 0.05, "llf") - 0.978226) < 1e-6


class TestDeterminism:
    def test_forest_study_bytes(self):
        spec = {
            "dgp": "lee",
            "boundary_point": [0.0],
            "methods": [{"method": "rf", "num_trees": 20}, {"method": "llf", "num_trees": 20}],
            "sample_sizes": [400],
            "replications": 3,
            "seed": 5,
        }
        one = emit_table(run_mc(study_from_dict(spec), n_jobs=1))
        many = emit_table(run_mc(study_from_dict(spec), n_jobs=4))
        assert one == many


@pytest.mark.slow
class TestLeeReproduction:
    def test_forests_at_5000(self):
        result = run(STUDY, threads=cpu_count())
        rf, llf = result.row("rf", 5000), result.row("llf", 5000)
        assert abs(rf.mean_bias) <= 0.02
        assert 0.88 <= rf.coverage <= 0.99
        assert abs(llf.mean_bias) <= 0.02
        assert 0.85 <= llf.coverage <= 0.99

    def test_bias_shrinks_with_n(self):
        config = study_from_dict({
            "dgp": "lee",
            "boundary_point": [0.0],
            "methods": [{"method": "rf", "num_trees": 1000}],
            "sample_sizes": [1000, 20000],
            "replications": 100,
            "seed": 2024,
        })
        result = run_mc(config, n_jobs=cpu_count())
        assert abs(result.row("rf", 20000).mean_bias) < abs(result.row("rf", 1000).mean_bias)
