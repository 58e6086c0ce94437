import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dropout_dro.exceptions import ConvergenceError, DimensionError, SingularDesignError
from dropout_dro.glm import (
    PHI_FLOOR,
    Dataset,
    FamilyKind,
    ModelParams,
    avg_neg_loglik,
    avg_neg_loglik_grad,
    fit_mle,
    loss,
    make_family,
    read_csv,
    write_csv,
)
from dropout_dro._optim import GdConfig

from conftest import make_linear, make_logistic

# ln(1 + e^40) and 1/(1 + e^-40) at 40 digits (mpmath)
LOG1PEXP_40 = 40.00000000000000000424835425529158898631
SIGMOID_40 = 0.9999999999999999957516457447084110227193
# 1/2 ln(4 pi) + 9/4 + (4.5 - 9)/2 (mpmath)
LINEAR_LOSS_EXAMPLE = 1.265512123484645396488945797134705923899
HALF_LOG_2PI = 0.9189385332046727417803297364056176398614


class TestFamilies:
    def test_linear_values(self):
        f = make_family("linear")
        assert f.psi(2.0) == 2.0 and f.psi_dot(2.0) == 2.0 and f.psi_ddot(2.0) == 1.0
        assert f.dispersion(3.0) == 3.0

    def test_logistic_at_zero(self):
        f = make_family(FamilyKind.LOGISTIC)
        assert f.psi(0.0) == pytest.approx(math.log(2), abs=1e-15)
        assert f.psi_dot(0.0) == 0.5
        assert f.psi_ddot(0.0) == 0.25

    def test_logistic_no_overflow(self):
        f = make_family("logistic")
        assert f.psi(40.0) == pytest.approx(LOG1PEXP_40, rel=1e-15)
        assert f.psi_dot(40.0) == pytest.approx(SIGMOID_40, rel=1e-15)
        assert np.isfinite(f.psi(1000.0)) and f.psi(-1000.0) >= 0

    def test_poisson_flagged(self):
        f = make_family("poisson")
        assert not f.bounded_curvature
        assert make_family("linear").bounded_curvature and make_family("logistic").bounded_curvature
        assert f.log_base(3.0, 1.0) == pytest.approx(-math.log(6.0))

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            make_family("gamma")

    @pytest.mark.parametrize("kind", ["linear", "logistic", "poisson"])
    def test_derivatives_match_finite_differences(self, kind):
        f = make_family(kind)
        eta = np.linspace(-10, 10, 201)
        h = 1e-5
        fd1 = (f.psi(eta + h) - f.psi(eta - h)) / (2 * h)
        fd2 = (f.psi_dot(eta + h) - f.psi_dot(eta - h)) / (2 * h)
        np.testing.assert_allclose(f.psi_dot(eta), fd1, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(f.psi_ddot(eta), fd2, rtol=1e-6, atol=1e-9)

    @pytest.mark.parametrize("kind", ["linear", "logistic", "poisson"])
    def test_convex_and_positive_dispersion(self, kind):
        f = make_family(kind)
        assert np.all(f.psi_ddot(np.linspace(-30, 30, 601)) >= 0)
        assert all(f.dispersion(phi) > 0 for phi in (1e-12, 1.0, 1e6))

    def test_logistic_curvature_bound(self):
        f = make_family("logistic")
        assert np.max(f.psi_ddot(np.linspace(-20, 20, 4001))) <= 0.25

    def test_response_domain(self):
        with pytest.raises(ValueError):
            Dataset(np.ones((2, 1)), [0.0, 0.5]).check_for(make_family("logistic"))
        with pytest.raises(ValueError):
            Dataset(np.ones((2, 1)), [1.0, -1.0]).check_for(make_family("poisson"))


class TestModelParamsAndDataset:
    def test_phi_must_be_positive(self):
        with pytest.raises(ValueError):
            ModelParams(np.zeros(2), 0.0)

    def test_beta_must_be_finite(self):
        with pytest.raises(ValueError):
            ModelParams(np.array([1.0, np.nan]))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            Dataset(np.ones((3, 2)), np.ones(2))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            Dataset(np.array([[np.inf]]), [1.0])

    def test_csv_round_trip(self, tmp_path, rng):
        data = make_linear(rng, 7, 3)
        write_csv(data, tmp_path / "d.csv")
        back = read_csv(tmp_path / "d.csv")
        np.testing.assert_array_equal(back.x, data.x)
        np.testing.assert_array_equal(back.y, data.y)

    def test_csv_missing_value(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("y,x1\n1.0,\n")
        with pytest.raises(ValueError, match="missing"):
            read_csv(p)

    def test_csv_bad_header(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("x1,y\n1.0,2.0\n")
        with pytest.raises(ValueError, match="header"):
            read_csv(p)


class TestLoss:
    def test_linear_zero(self):
        assert loss("linear", [1.0, 0.0], 0.0, ModelParams(np.zeros(2), 1.0)) == pytest.approx(HALF_LOG_2PI, abs=1e-15)

    def test_logistic_ln2(self):
        assert loss("logistic", [1.0], 1.0, ModelParams(np.zeros(1))) == pytest.approx(math.log(2), abs=1e-15)

    def test_linear_hand_computed(self):
        value = loss("linear", [1.0, 2.0], 3.0, ModelParams(np.ones(2), 2.0))
        assert value == pytest.approx(LINEAR_LOSS_EXAMPLE, rel=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            loss("linear", [1.0, 2.0, 3.0], 0.0, ModelParams(np.zeros(2)))

    def test_average_matches_loop(self, rng):
        data = make_linear(rng, 5, 3)
        params = ModelParams(rng.standard_normal(3), 1.7)
        loop = sum(loss("linear", data.x[i], data.y[i], params) for i in range(5)) / 5
        assert avg_neg_loglik("linear", data, params) == pytest.approx(loop, rel=1e-14)

    def test_single_row_and_duplication(self, rng):
        data = make_logistic(rng, 6, 2)
        params = ModelParams(rng.standard_normal(2))
        one = data.subset([0])
        assert avg_neg_loglik("logistic", one, params) == loss("logistic", data.x[0], data.y[0], params)
        doubled = Dataset(np.vstack([data.x, data.x]), np.concatenate([data.y, data.y]))
        assert avg_neg_loglik("logistic", doubled, params) == pytest.approx(avg_neg_loglik("logistic", data, params), rel=1e-15)

    def test_empty(self):
        with pytest.raises(ValueError):
            avg_neg_loglik("linear", Dataset(np.zeros((0, 2)), np.zeros(0)), ModelParams(np.zeros(2)))

    @pytest.mark.parametrize("kind", ["linear", "logistic"])
    def test_gradient_finite_differences(self, kind, rng):
        data = make_linear(rng, 12, 4) if kind == "linear" else make_logistic(rng, 12, 4)
        beta = rng.standard_normal(4)
        g = avg_neg_loglik_grad(kind, data, ModelParams(beta, 1.3))
        h = 1e-6
        fd = np.array(
            [
                (avg_neg_loglik(kind, data, ModelParams(beta + h * e, 1.3)) - avg_neg_loglik(kind, data, ModelParams(beta - h * e, 1.3))) / (2 * h)
                for e in np.eye(4)
            ]
        )
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.sampled_from(["linear", "logistic"]))
    def test_convexity(self, seed, t, kind):
        rng = np.random.default_rng(seed)
        data = make_linear(rng, 8, 3) if kind == "linear" else make_logistic(rng, 8, 3)
        b1, b2 = rng.standard_normal(3), rng.standard_normal(3)
        val = lambda b: avg_neg_loglik(kind, data, ModelParams(b, 1.0))
        assert val(t * b1 + (1 - t) * b2) <= t * val(b1) + (1 - t) * val(b2) + 1e-10

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        x, beta = rng.standard_normal(5), rng.standard_normal(5)
        perm = rng.permutation(5)
        for kind in ("linear", "logistic"):
            y = 1.0
            a = loss(kind, x, y, ModelParams(beta, 2.0))
            b = loss(kind, x[perm], y, ModelParams(beta[perm], 2.0))
            assert a == pytest.approx(b, rel=1e-14)


class TestFitMle:
    def test_linear_matches_normal_equations(self, rng):
        data = make_linear(rng, 40, 4)
        params = fit_mle("linear", data)
        direct = np.linalg.solve(data.x.T @ data.x, data.x.T @ data.y)
        np.testing.assert_allclose(params.beta, direct, atol=1e-8)
        assert params.phi == pytest.approx(np.mean((data.y - data.x @ direct) ** 2), rel=1e-10)

    def test_exact_fit_floors_phi(self, rng):
        x = rng.standard_normal((10, 3))
        beta0 = np.array([1.0, -2.0, 0.5])
        params = fit_mle("linear", Dataset(x, x @ beta0))
        np.testing.assert_allclose(params.beta, beta0, atol=1e-10)
        assert params.phi >= PHI_FLOOR

    def test_logistic_gradient_vanishes(self, rng):
        data = make_logistic(rng, 200, 3)
        params = fit_mle("logistic", data)
        assert np.max(np.abs(avg_neg_loglik_grad("logistic", data, params))) < 1e-6

    def test_poisson(self, rng):
        x = rng.standard_normal((300, 2)) * 0.5
        y = rng.poisson(np.exp(x @ np.array([0.5, -0.3]))).astype(float)
        params = fit_mle("poisson", Dataset(x, y))
        assert np.max(np.abs(avg_neg_loglik_grad("poisson", Dataset(x, y), params))) < 1e-6

    def test_singular_design(self):
        x = np.ones((5, 2))
        with pytest.raises(SingularDesignError):
            fit_mle("linear", Dataset(x, np.arange(5.0)))

    def test_iteration_cap(self, rng):
        data = make_logistic(rng, 50, 3)
        with pytest.raises(ConvergenceError) as info:
            fit_mle("logistic", data, GdConfig("fixed", lr=1e-3, max_iters=3))
        assert info.value.last_iterate is not None and info.value.iterations == 3
