"""Data-generating processes and their ground-truth effects."""

import numpy as np
import pytest

from rdforest.dgp_suite import (
    CHUNK_SIZE,
    DGP_DISPLAY_NAME_MAPPINGS,
    DGP_PRESET_MAPPINGS,
    PolynomialCEF,
    ScoreLaw,
    dgp_from_dict,
    eval_cef,
    preset,
    sample_scores,
    simulate,
    true_effect,
    with_sigma,
)
from rdforest.errors import BoundaryError, ConfigError, DimensionError


class TestPresets:
    def test_registries_agree(self):
        assert set(DGP_PRESET_MAPPINGS) == set(DGP_DISPLAY_NAME_MAPPINGS)

    def test_lee_truth(self):
        np.testing.assert_allclose(true_effect(preset("lee"), 0.0), 0.04, atol=1e-12)

    def test_lee_intercepts(self):
        spec = preset("lee")
        assert eval_cef(spec.cef, 0.0, "treated") == pytest.approx(0.52)
        assert eval_cef(spec.cef, 0.0, "control") == pytest.approx(0.48)

    def test_bivariate_truth_at_origin(self):
        np.testing.assert_allclose(true_effect(preset("bivariate"), (0.0, 0.0)), 0.4, atol=1e-12)
        np.testing.assert_allclose(true_effect(preset("kt_price"), (0.0, 0.0)), 13544.3 - 230407.6, rtol=1e-12)

    def test_turnout_truth_is_a_probability_difference(self):
        tau = true_effect(preset("kt_turnout"), (0.0, 0.0))
        assert -1.0 <= tau <= 1.0

    def test_truth_off_the_boundary(self):
        with pytest.raises(BoundaryError):
            true_effect(preset("lee"), 0.5)

    def test_truth_dimension(self):
        with pytest.raises(DimensionError):
            true_effect(preset("lee"), (0.0, 0.0))

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("nope")

    def test_preset_overrides(self):
        spec = preset("bivariate", centers=(0.1, -0.2))
        assert spec.cef.centers == (0.1, -0.2)
        with pytest.raises(ConfigError):
            preset("lee", centers=(0.0,))


class TestSimulate:
    def test_same_seed_same_data(self):
        a = simulate(preset("lee"), 500, seed=11)
        b = simulate(preset("lee"), 500, seed=11)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.y, b.y)

    def test_different_seed_different_data(self):
        a = simulate(preset("lee"), 100, seed=1)
        b = simulate(preset("lee"), 100, seed=2)
        assert not np.array_equal(a.x, b.x)

    def test_worker_count_does_not_change_draws(self):
        n = CHUNK_SIZE + 1000
        a = simulate(preset("lee"), n, seed=5, n_jobs=1)
        b = simulate(preset("lee"), n, seed=5, n_jobs=2)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.y, b.y)

    def test_beta_scores(self):
        x = sample_scores(preset("lee"), 200_000, seed=0)
        assert x.min() >= -1.0 and x.max() <= 1.0
        # 2 * Beta(2, 4) - 1 has mean -1/3
        np.testing.assert_allclose(x.mean(), -1.0 / 3.0, atol=5e-3)

    def test_uniform_square_is_centred(self):
        x = sample_scores(ScoreLaw("uniform_square", dim=2), 1_000_000, seed=1)
        np.testing.assert_allclose(x.mean(axis=0), [0.0, 0.0], atol=5e-3)

    def test_lee_residual_spread(self):
        spec = preset("lee")
        data = simulate(spec, 100_000, seed=6)
        resid = data.y - spec.cef.values(data.x, data.d.astype(bool))
        assert abs(resid.std() - 0.1295) < 2e-3

    def test_binned_means_track_the_cef(self):
        spec = preset("lee")
        data = simulate(spec, 1_000_000, seed=12)
        x = data.x[:, 0]
        cef = spec.cef.values(data.x, data.d.astype(bool))
        bins = np.clip(np.floor((x + 1.0) / 0.01).astype(int), 0, 199)
        count = np.bincount(bins, minlength=200)
        keep = count >= 30
        gap = (np.bincount(bins, weights=data.y - cef, minlength=200)[keep]) / count[keep]
        assert np.all(np.abs(gap) < 4.5 * 0.1295 / np.sqrt(count[keep]))

    def test_labels_follow_rule(self):
        data = simulate(preset("lee"), 1000, seed=3)
        np.testing.assert_array_equal(data.d, (data.x[:, 0] >= 0).astype(np.int8))

    def test_noiseless_outcomes_equal_the_cef(self):
        spec = with_sigma(preset("bivariate"), 0.0)
        data = simulate(spec, 300, seed=4)
        np.testing.assert_array_equal(data.y, spec.cef.values(data.x, data.d.astype(bool)))

    def test_bernoulli_outcomes(self):
        data = simulate(preset("kt_turnout"), 400, seed=8)
        assert set(np.unique(data.y)) <= {0.0, 1.0}

    def test_n_must_be_positive(self):
        with pytest.raises(ConfigError):
            simulate(preset("lee"), 0, seed=0)


class TestSpecification:
    def test_coefficient_count(self):
        with pytest.raises(ConfigError):
            PolynomialCEF(2, "raw_powers_1d", (1.0, 2.0), (1.0, 2.0, 3.0))

    def test_demeaned_higher_powers(self):
        cef = PolynomialCEF(2, "raw_powers_1d", (0.0, 1.0, 1.0), (0.0, 0.0, 0.0), centers=(0.5,))
        # x + (x - 0.5)^2 at x = 0.5
        assert eval_cef(cef, 0.5, "treated") == pytest.approx(0.5)

    def test_full_object(self):
        spec = dgp_from_dict({
            "name": "line",
            "score_law": {"kind": "uniform_square", "dim": 1},
            "cef": {"degree": 1, "basis": "raw_powers_1d", "coeffs_treated": [1.0, 2.0], "coeffs_control": [0.0, 2.0]},
            "outcome": {"kind": "gaussian_noise", "sigma": 0.5},
            "rule": {"kind": "threshold", "cutoff": 0.0},
        })
        assert true_effect(spec, 0.0) == pytest.approx(1.0)

    def test_unknown_keys(self):
        with pytest.raises(ConfigError):
            dgp_from_dict({"score_law": {"kind": "uniform_square"}, "rule": {"kind": "threshold"}, "extra": 1})

    def test_dimension_disagreement(self):
        with pytest.raises(DimensionError):
            dgp_from_dict({
                "score_law": {"kind": "uniform_square", "dim": 2},
                "cef": {"degree": 1, "basis": "raw_powers_1d", "coeffs_treated": [1, 2], "coeffs_control": [0, 2]},
                "outcome": {"kind": "gaussian_noise"},
                "rule": {"kind": "threshold"},
            })
