import numpy as np
import pytest

from sparseps.data import Dataset
from sparseps.model import (
    PROB_FLOOR,
    PriorConfig,
    fisher_info,
    link_logistic,
    log_likelihood,
    propensity,
    score,
)

from conftest import make_dataset
from oracles import fd_gradient, fd_hessian, logistic_highprec, loglik_rowwise


class TestLink:
    def test_zero_gives_half(self):
        assert link_logistic(0.0) == 0.5

    def test_log3_gives_three_quarters(self):
        assert link_logistic(np.log(3.0)) == pytest.approx(0.75, abs=1e-15)

    def test_large_negative_clamps_to_floor(self):
        # extended-precision value is ~1.9e-22, far below the floor
        assert logistic_highprec(-50.0) < PROB_FLOOR
        assert link_logistic(-50.0) == PROB_FLOOR

    def test_large_positive_clamps(self):
        assert link_logistic(60.0) == 1.0 - PROB_FLOOR

    def test_no_overflow_extremes(self):
        vals = link_logistic(np.array([-800.0, 800.0]))
        assert np.all(np.isfinite(vals))

    def test_strictly_increasing(self):
        grid = np.linspace(-30.0, 30.0, 20001)  # spacing 3e-3 > 1e-6
        vals = link_logistic(grid)
        assert np.all(np.diff(vals) > 0)


class TestPropensity:
    def test_intercept_only_zero_coef(self):
        x = np.zeros(5)
        x[0] = 1.0
        assert propensity(x, np.zeros(5)) == 0.5

    def test_matches_scalar_logistic(self):
        x = np.array([1.0, 1.0, 0.0])
        phi = np.array([1.0, 1.0, 0.0])
        assert propensity(x, phi) == pytest.approx(np.exp(2) / (1 + np.exp(2)), rel=1e-12)

    def test_inner_product_log3(self):
        x = np.array([1.0, 2.0, -1.0])
        phi = np.array([np.log(3.0), 1.0, 2.0])  # x . phi = log 3
        assert propensity(x, phi) == pytest.approx(0.75, rel=1e-12)

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            propensity(np.ones(3), np.ones(4))

    def test_output_within_clamp_range(self):
        rng = np.random.default_rng(3)
        x = np.hstack([np.ones((50, 1)), rng.standard_normal((50, 2)) * 40])
        pi = propensity(x, np.array([0.0, 5.0, -5.0]))
        assert np.all(pi >= PROB_FLOOR) and np.all(pi <= 1 - PROB_FLOOR)


class TestLogLikelihood:
    def test_zero_coefficients(self, small_data):
        assert log_likelihood(small_data, np.zeros(small_data.d)) == pytest.approx(
            small_data.n * np.log(0.5), rel=1e-12
        )

    def test_single_row(self):
        data = Dataset(x=np.array([[1.0]]), y=np.array([0.0]), delta=np.array([1]))
        phi = np.array([np.log(3.0)])  # pi = 0.75
        assert log_likelihood(data, phi) == pytest.approx(np.log(0.75), rel=1e-12)

    def test_matches_rowwise_oracle(self):
        rng = np.random.default_rng(11)
        data = make_dataset(n=5, p=2, seed=5)
        phi = rng.normal(size=data.d)
        expected = loglik_rowwise(data.x, data.y, data.delta, phi)
        assert log_likelihood(data, phi) == pytest.approx(expected, rel=1e-12)


class TestScore:
    def test_zero_coefficients_closed_form(self, small_data):
        expected = (small_data.delta - 0.5) @ small_data.x
        assert np.allclose(score(small_data, np.zeros(small_data.d)), expected, rtol=1e-12)

    def test_matches_finite_differences(self):
        # exact-gradient property over 20 random instances
        rng = np.random.default_rng(2024)
        for k in range(20):
            n = int(rng.integers(10, 51))
            p = int(rng.integers(1, 10))
            data = make_dataset(n=n, p=p, seed=100 + k)
            phi = rng.normal(scale=0.7, size=data.d)
            analytic = score(data, phi)
            numeric = fd_gradient(lambda v: log_likelihood(data, v), phi, step=1e-5)
            denom = max(1.0, float(np.max(np.abs(analytic))))
            assert np.max(np.abs(analytic - numeric)) / denom < 1e-6


class TestFisherInfo:
    def test_zero_coefficients_closed_form(self, small_data):
        expected = 0.25 * small_data.x.T @ small_data.x / small_data.n
        assert np.allclose(fisher_info(small_data, np.zeros(small_data.d)), expected)

    def test_single_row_intercept(self):
        data = Dataset(x=np.array([[1.0]]), y=np.array([1.0]), delta=np.array([1]))
        assert fisher_info(data, np.zeros(1)) == pytest.approx(np.array([[0.25]]))

    def test_matches_finite_difference_hessian(self):
        data = make_dataset(n=30, p=2, seed=9)
        rng = np.random.default_rng(9)
        phi = rng.normal(scale=0.5, size=data.d)
        numeric = -fd_hessian(lambda v: log_likelihood(data, v), phi, step=1e-4) / data.n
        analytic = fisher_info(data, phi)
        assert np.max(np.abs(analytic - numeric)) / np.max(np.abs(analytic)) < 1e-5

    def test_symmetric_and_psd(self):
        rng = np.random.default_rng(17)
        for k in range(10):
            data = make_dataset(n=25, p=4, seed=200 + k)
            info = fisher_info(data, rng.normal(size=data.d))
            assert np.allclose(info, info.T, atol=1e-15)
            assert np.linalg.eigvalsh(info).min() > -1e-10


class TestPriorConfig:
    def test_defaults_valid(self):
        cfg = PriorConfig()
        assert cfg.nu0 < cfg.nu1 and cfg.gamma0 < cfg.gamma1

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"nu0": 1.0, "nu1": 0.5},
            {"nu0": -1.0},
            {"gamma0": 2.0, "gamma1": 1.0},
            {"w": 1.5},
            {"xi": 0.0},
            {"c1": 0.0},
        ],
    )
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            PriorConfig(**kwargs)

    def test_vector_w_broadcast(self):
        cfg = PriorConfig(w=np.array([0.2, 0.5, 0.9]))
        assert np.allclose(cfg.w_vector(3), [0.2, 0.5, 0.9])
        assert np.allclose(PriorConfig().w_vector(4), 0.5)

    def test_slab_spike_variances(self):
        cfg = PriorConfig(nu0=1e-4, nu1=1e4)
        z = np.array([1, 0, 1])
        assert np.allclose(cfg.slab_spike_variances(z), [1e4, 1e-4, 1e4])
