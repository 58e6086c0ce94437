import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dropout_dro.exceptions import DimensionError
from dropout_dro.glm import Dataset, ModelParams, avg_neg_loglik
from dropout_dro.noise import DropoutSpec, sample_masks
from dropout_dro.objective import (
    DropoutObjectiveValue,
    WeightedDesign,
    asymptotic_bias_mu,
    dropout_hessian,
    dropout_objective_exact,
    dropout_objective_grad,
    dropout_objective_mc,
    dropout_score,
    first_order_residual,
    sigma_matrix,
)
from dropout_dro.ridge import penalized_objective

from conftest import make_linear, make_logistic

# four-mask hand sum for x = [(0.5,-1), (1.5,0.25), (-0.75,2)], y = [1,0,1],
# beta = (0.8,-0.6), delta = 0.5
LOGISTIC_HAND_SUM = 1.3062116098592533


def _data(kind, rng, n=10, d=4):
    return make_linear(rng, n, d) if kind == "linear" else make_logistic(rng, n, d)


class TestExactObjective:
    @pytest.mark.parametrize("kind", ["linear", "logistic", "poisson"])
    def test_zero_delta_is_likelihood(self, kind, rng):
        if kind == "poisson":
            x = rng.standard_normal((8, 3)) * 0.4
            data = Dataset(x, rng.poisson(1.0, 8).astype(float))
        else:
            data = _data(kind, rng)
        params = ModelParams(rng.standard_normal(data.d), 1.4)
        value = dropout_objective_exact(kind, data, params, 0.0)
        assert value.value == pytest.approx(avg_neg_loglik(kind, data, params), rel=1e-13)
        assert value.method == "exact" and value.mc_std_err is None

    def test_linear_penalized_identity(self, rng):
        data = make_linear(rng, 15, 5)
        for _ in range(20):
            beta, delta, phi = rng.standard_normal(5), rng.uniform(0, 0.9), rng.uniform(0.2, 5)
            exact = dropout_objective_exact("linear", data, ModelParams(beta, phi), delta).value
            closed = 0.5 * np.log(2 * np.pi * phi) + penalized_objective(data, beta, delta) / (2 * phi)
            assert exact == pytest.approx(closed, abs=1e-10)

    def test_logistic_hand_enumeration(self):
        data = Dataset([[0.5, -1.0], [1.5, 0.25], [-0.75, 2.0]], [1.0, 0.0, 1.0])
        value = dropout_objective_exact("logistic", data, ModelParams(np.array([0.8, -0.6])), 0.5)
        assert value.value == pytest.approx(LOGISTIC_HAND_SUM, rel=1e-14)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(DimensionError):
            dropout_objective_exact("linear", make_linear(rng, 4, 2), ModelParams(np.zeros(3)), 0.1)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 0.95), st.sampled_from(["linear", "logistic"]))
    def test_dominance(self, seed, delta, kind):
        rng = np.random.default_rng(seed)
        data = _data(kind, rng, 6, 3)
        params = ModelParams(rng.standard_normal(3) * 2, rng.uniform(0.3, 3))
        hi = dropout_objective_exact(kind, data, params, delta).value
        lo = dropout_objective_exact(kind, data, params, 0.0).value
        assert hi >= lo - 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 0.8))
    def test_convexity(self, seed, delta):
        rng = np.random.default_rng(seed)
        data = make_logistic(rng, 6, 3)
        b1, b2 = rng.standard_normal(3), rng.standard_normal(3)
        f = lambda b: dropout_objective_exact("logistic", data, ModelParams(b), delta).value
        assert f(0.5 * (b1 + b2)) <= 0.5 * (f(b1) + f(b2)) + 1e-10

    def test_value_object(self):
        with pytest.raises(ValueError):
            DropoutObjectiveValue(1.0, "exact", mc_std_err=0.1)
        assert float(DropoutObjectiveValue(2.5, "exact")) == 2.5


class TestMonteCarlo:
    def test_zero_delta_exact(self, rng):
        data = make_logistic(rng, 5, 2)
        params = ModelParams(rng.standard_normal(2))
        mc = dropout_objective_mc("logistic", data, params, 0.0, 7, np.random.default_rng(0))
        assert mc.value == pytest.approx(avg_neg_loglik("logistic", data, params), rel=1e-14)

    def test_agrees_with_exact(self, rng):
        data = make_linear(rng, 6, 3)
        params = ModelParams(rng.standard_normal(3), 1.0)
        exact = dropout_objective_exact("linear", data, params, 0.3).value
        mc = dropout_objective_mc("linear", data, params, 0.3, 100_000, np.random.default_rng(4))
        assert abs(mc.value - exact) <= 3 * mc.mc_std_err

    def test_coverage_over_seeds(self, rng):
        data = make_logistic(rng, 4, 3)
        params = ModelParams(rng.standard_normal(3))
        exact = dropout_objective_exact("logistic", data, params, 0.4).value
        hits = 0
        for seed in range(100):
            mc = dropout_objective_mc("logistic", data, params, 0.4, 2_000, np.random.default_rng(seed))
            hits += abs(mc.value - exact) <= 3 * mc.mc_std_err
        assert hits >= 97

    def test_deterministic(self, rng):
        data = make_logistic(rng, 4, 3)
        params = ModelParams(rng.standard_normal(3))
        a = dropout_objective_mc("logistic", data, params, 0.2, 50, np.random.default_rng(9))
        b = dropout_objective_mc("logistic", data, params, 0.2, 50, np.random.default_rng(9))
        assert a == b

    def test_single_mask_has_no_std_err(self, rng):
        data = make_linear(rng, 3, 2)
        mc = dropout_objective_mc("linear", data, ModelParams(np.ones(2)), 0.2, 1, np.random.default_rng(0))
        assert mc.mc_std_err is None


class TestDerivatives:
    @pytest.mark.parametrize("kind", ["linear", "logistic"])
    def test_score_finite_differences(self, kind, rng):
        data = _data(kind, rng, 8, 4)
        beta, phi = rng.standard_normal(4), 1.7 if kind == "linear" else 1.0
        grad = -dropout_score(kind, data, beta, 0.35) / (phi if kind == "linear" else 1.0)
        h = 1e-6
        fd = np.array(
            [
                (
                    dropout_objective_exact(kind, data, ModelParams(beta + h * e, phi), 0.35).value
                    - dropout_objective_exact(kind, data, ModelParams(beta - h * e, phi), 0.35).value
                )
                / (2 * h)
                for e in np.eye(4)
            ]
        )
        np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(dropout_objective_grad(kind, data, ModelParams(beta, phi), 0.35), grad, rtol=1e-12)

    def test_score_zero_delta(self, rng):
        data = make_logistic(rng, 10, 3)
        beta = rng.standard_normal(3)
        plain = data.x.T @ (data.y - 1 / (1 + np.exp(-(data.x @ beta)))) / data.n
        np.testing.assert_allclose(dropout_score("logistic", data, beta, 0.0), plain, atol=1e-15)

    @pytest.mark.parametrize("kind", ["linear", "logistic"])
    def test_hessian_finite_differences(self, kind, rng):
        data = _data(kind, rng, 8, 4)
        beta = rng.standard_normal(4)
        hess = dropout_hessian(kind, data, beta, 0.25)
        h = 1e-5
        fd = np.column_stack(
            [(dropout_score(kind, data, beta + h * e, 0.25) - dropout_score(kind, data, beta - h * e, 0.25)) / (2 * h) for e in np.eye(4)]
        )
        np.testing.assert_allclose(hess, fd, rtol=1e-5, atol=1e-9)

    def test_linear_hessian_independent_of_beta(self, rng):
        data = make_linear(rng, 6, 3)
        a = dropout_hessian("linear", data, rng.standard_normal(3), 0.3)
        b = dropout_hessian("linear", data, rng.standard_normal(3), 0.3)
        np.testing.assert_allclose(a, b, atol=1e-14)

    def test_negative_semidefinite(self, rng):
        for _ in range(10):
            data = make_logistic(rng, 7, 4)
            h = dropout_hessian("logistic", data, rng.standard_normal(4) * 3, rng.uniform(0, 0.8))
            assert np.linalg.eigvalsh(-h).min() >= -1e-10


class TestWeightedDesign:
    def test_from_masks_shape(self, rng):
        data = make_linear(rng, 3, 2)
        masks = sample_masks(DropoutSpec.homogeneous(0.3, 2), rng, (3, 5))
        design = WeightedDesign.from_masks(data, masks)
        assert design.x.shape == (15, 2) and design.w.sum() == pytest.approx(1.0)
        with pytest.raises(DimensionError):
            WeightedDesign.from_masks(data, masks[:2])


class TestAsymptoticQuantities:
    def test_sigma_identity_for_normal_design(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((200_000, 3))
        s = sigma_matrix("linear", x, np.ones(3))
        # entries of the sample second moment have sd about 1/sqrt(n) off-diagonal, sqrt(2/n) on it
        assert np.max(np.abs(s - np.eye(3))) < 3 * np.sqrt(2 / 200_000)

    def test_sigma_single_row_and_duplication(self, rng):
        x = rng.standard_normal((1, 3))
        beta = rng.standard_normal(3)
        w = 1 / (1 + np.exp(-(x[0] @ beta)))
        np.testing.assert_allclose(sigma_matrix("logistic", x, beta), w * (1 - w) * np.outer(x[0], x[0]), rtol=1e-13)
        x = rng.standard_normal((5, 3))
        np.testing.assert_allclose(sigma_matrix("logistic", np.vstack([x, x]), beta), sigma_matrix("logistic", x, beta), rtol=1e-13)

    def test_bias_single_coordinate(self, rng):
        data = make_logistic(rng, 30, 1)
        beta = np.array([0.7])
        expected = sigma_matrix("logistic", data.x, beta) @ beta
        np.testing.assert_allclose(asymptotic_bias_mu("logistic", data, beta), expected, rtol=1e-13)

    def test_bias_linear_diagonal_design(self):
        # population value for x ~ N(0, I), y = x @ b + eps is diag(Sigma) b = b
        rng = np.random.default_rng(8)
        beta = np.array([1.0, -0.5, 2.0])
        data = make_linear(rng, 400_000, 3, beta)
        np.testing.assert_allclose(asymptotic_bias_mu("linear", data, beta), beta, atol=0.03)

    def test_bias_stability(self, rng):
        beta = np.array([0.5, -0.5])

        def draw(n):
            x = rng.standard_normal((n, 2))
            return Dataset(x, (rng.random(n) < 1 / (1 + np.exp(-(x @ beta)))).astype(float))

        a = asymptotic_bias_mu("logistic", draw(20_000), beta)
        b = asymptotic_bias_mu("logistic", draw(40_000), beta)
        # both are within a few multiples of 1/sqrt(20000) of the population value
        assert np.max(np.abs(a - b)) < 0.05

    def test_first_order_residual_small_at_truth(self):
        rng = np.random.default_rng(5)
        beta = np.array([1.0, 2.0])
        data = make_linear(rng, 100_000, 2, beta)
        assert np.max(np.abs(first_order_residual("linear", data, beta))) < 0.02
