"""Kernel local linear RD estimation on a univariate score."""

import numpy as np
import pytest

from rdforest.domain_core import ComplementRule, Dataset, UnivariateThreshold
from rdforest.errors import ConfigError, EmptySideError, MethodError, SingularDesignError
from rdforest.local_linear import KernelSpec, _side_fit, kernel_weight, llr_rd_estimate, rot_bandwidth, wls_linear_fit

RULE = UnivariateThreshold(0.0)


def _piecewise(n=400, jump=0.7, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, n)
    y = 1.0 + 2.0 * x + jump * (x >= 0) + noise * rng.standard_normal(n)
    return Dataset.from_arrays(y, x, rule=RULE)


class TestKernels:
    def test_triangular(self):
        spec = KernelSpec("triangular")
        assert kernel_weight(spec, 0.0, 1.0) == 1.0
        assert kernel_weight(spec, 1.0, 1.0) == 0.0
        assert kernel_weight(spec, 0.5, 1.0) == pytest.approx(0.5)

    def test_epanechnikov_and_uniform(self):
        assert kernel_weight(KernelSpec("epanechnikov"), 0.0, 2.0) == pytest.approx(0.75)
        np.testing.assert_array_equal(kernel_weight(KernelSpec("uniform"), np.array([0.5, 1.5]), 1.0), [1.0, 0.0])

    def test_bad_specs(self):
        with pytest.raises(ConfigError):
            KernelSpec("gaussian")
        with pytest.raises(ConfigError):
            KernelSpec(bandwidth=0.0)


class TestWeightedFit:
    def test_exact_line(self):
        xs = np.linspace(-1.0, 1.0, 11)
        intercept, slope = wls_linear_fit(xs, 2.0 + 3.0 * xs, np.ones_like(xs), center=0.5)
        assert intercept == pytest.approx(3.5, abs=1e-12)
        assert slope == pytest.approx(3.0, abs=1e-12)

    def test_two_points(self):
        intercept, slope = wls_linear_fit([1.0, 2.0], [2.0, 3.0], [1.0, 1.0], center=0.0)
        assert intercept == pytest.approx(1.0, abs=1e-12)
        assert slope == pytest.approx(1.0, abs=1e-12)

    def test_matches_least_squares(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            m = int(rng.integers(3, 40))
            xs = rng.uniform(-2.0, 2.0, m)
            ys = rng.standard_normal(m)
            w = rng.uniform(0.05, 3.0, m)
            center = float(rng.uniform(-1.0, 1.0))
            root = np.sqrt(w)
            design = np.column_stack([np.ones(m), xs - center]) * root[:, None]
            expected = np.linalg.lstsq(design, ys * root, rcond=None)[0]
            np.testing.assert_allclose(wls_linear_fit(xs, ys, w, center), expected, rtol=1e-9, atol=1e-11)

    def test_weight_scale_invariance(self):
        rng = np.random.default_rng(11)
        xs, ys, w = rng.uniform(-1.0, 1.0, 50), rng.standard_normal(50), rng.uniform(0.0, 1.0, 50)
        np.testing.assert_allclose(wls_linear_fit(xs, ys, 7.5 * w, 0.2), wls_linear_fit(xs, ys, w, 0.2), rtol=1e-10, atol=1e-12)
        base, scaled = _side_fit(xs, ys, w, 0.2), _side_fit(xs, ys, 7.5 * w, 0.2)
        np.testing.assert_allclose(scaled[:2], base[:2], rtol=1e-10, atol=1e-12)

    def test_hc0_standard_error(self):
        rng = np.random.default_rng(12)
        xs, ys, w = rng.uniform(-1.0, 1.0, 80), rng.standard_normal(80), rng.uniform(0.1, 1.0, 80)
        intercept, se, m = _side_fit(xs, ys, w, 0.0)
        X = np.column_stack([np.ones(80), xs])
        bread = np.linalg.inv(X.T @ (w[:, None] * X))
        coef = bread @ X.T @ (w * ys)
        meat = (X * ((w * (ys - X @ coef)) ** 2)[:, None]).T @ X
        assert intercept == pytest.approx(coef[0], abs=1e-12)
        assert se == pytest.approx(np.sqrt((bread @ meat @ bread)[0, 0]), rel=1e-8)
        assert m == 80

    def test_single_support_point(self):
        with pytest.raises(SingularDesignError):
            wls_linear_fit([0.1, 0.1, 0.5], [1.0, 2.0, 3.0], [1.0, 1.0, 0.0], center=0.0)


class TestBandwidth:
    def test_rule_of_thumb_keeps_points_on_both_sides(self):
        x = np.random.default_rng(4).uniform(-1.0, 1.0, 500)
        h = rot_bandwidth(x, 0.0)
        assert np.sum((x >= 0) & (x < h)) >= 10
        assert np.sum((x < 0) & (x > -h)) >= 10

    def test_widens_for_sparse_sides(self):
        x = np.concatenate([np.linspace(-1.0, -0.5, 100), np.linspace(0.6, 1.0, 100)])
        h = rot_bandwidth(x, 0.0)
        assert h > 0.6

    def test_tenth_nearest_point_keeps_weight(self):
        x = np.concatenate([np.linspace(-1.0, -0.5, 100), np.linspace(0.6, 1.0, 100)])
        h = rot_bandwidth(x, 0.0)
        w = kernel_weight(KernelSpec(), x, h)
        for side in (w[x >= 0], w[x < 0]):
            assert np.sort(side)[-10] > 1e-4

    def test_sides_follow_the_rule(self):
        x = np.concatenate([np.zeros(9), np.linspace(-1.0, -0.5, 100), np.linspace(0.6, 1.0, 100)])
        rule = ComplementRule(RULE)
        h = rot_bandwidth(x, 0.0, rule)
        treated = rule.assign_many(x[:, None]).astype(bool)
        w = kernel_weight(KernelSpec(), x, h)
        for side in (w[treated], w[~treated]):
            assert np.sort(side)[-10] > 1e-4

    def test_too_few_points(self):
        with pytest.raises(ConfigError):
            rot_bandwidth(np.linspace(-1, 1, 10), 0.0)


class TestLocalLinearRD:
    def test_recovers_noiseless_jump(self):
        report = llr_rd_estimate(_piecewise(), 0.0, KernelSpec(bandwidth=0.5))
        assert abs(report.estimate - 0.7) < 1e-10
        assert report.covers(report.estimate)
        assert report.method == "llr"

    def test_noisy_jump_is_covered(self):
        report = llr_rd_estimate(_piecewise(n=4000, noise=0.1, seed=2), 0.0)
        assert report.std_error > 0
        assert abs(report.estimate - 0.7) < 5 * report.std_error
        assert report.details["bandwidth"] > 0

    def test_outcome_shift_leaves_the_estimate(self):
        data = _piecewise(n=1000, noise=0.1, seed=5)
        base = llr_rd_estimate(data, 0.0)
        moved = llr_rd_estimate(data.with_outcomes(data.y + 5.0), 0.0)
        assert abs(moved.estimate - base.estimate) < 1e-12
        np.testing.assert_allclose(moved.std_error, base.std_error, rtol=1e-9)

    def test_complement_rule_negates(self):
        data = _piecewise(noise=0.1, seed=3)
        base = llr_rd_estimate(data, 0.0, KernelSpec(bandwidth=0.4))
        flipped = Dataset(data.y, data.x, 1 - data.d, ComplementRule(RULE))
        neg = llr_rd_estimate(flipped, 0.0, KernelSpec(bandwidth=0.4), rule=flipped.rule)
        np.testing.assert_allclose(neg.estimate, -base.estimate, atol=1e-12)
        np.testing.assert_allclose(neg.std_error, base.std_error, rtol=1e-12)

    def test_multivariate_scores(self):
        data = Dataset([0.0, 1.0], [[0.1, 0.2], [-0.1, 0.3]], [1, 0])
        with pytest.raises(MethodError):
            llr_rd_estimate(data, 0.0)

    def test_empty_window(self):
        x = np.concatenate([np.linspace(-1.0, -0.5, 30), np.linspace(0.5, 1.0, 30)])
        data = Dataset.from_arrays(x, x, rule=RULE)
        with pytest.raises(EmptySideError):
            llr_rd_estimate(data, 0.0, KernelSpec(bandwidth=0.1))
