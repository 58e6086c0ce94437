import pickle

import numpy as np
import pytest
from sklearn.model_selection import cross_val_score
from sklearn.utils.estimator_checks import check_estimator

from dropout_dro import DropoutGLM
from dropout_dro.glm import Dataset, fit_mle
from dropout_dro.ridge import dropout_ridge
from dropout_dro.solvers import solve_exact_gd


def intercept_free(rng, n=60, d=3):
    x = rng.standard_normal((n, d))
    return x, x @ np.array([1.0, -2.0, 0.5])[:d] + 0.3 * rng.standard_normal(n)


class TestSklearnContract:
    def test_check_estimator(self):
        check_estimator(DropoutGLM())

    def test_clone_and_pickle(self, rng):
        x, y = intercept_free(rng)
        est = DropoutGLM(delta=0.2).fit(x, y)
        again = pickle.loads(pickle.dumps(est))
        np.testing.assert_array_equal(again.predict(x), est.predict(x))

    def test_cross_val(self, rng):
        x, y = intercept_free(rng, 100)
        assert np.mean(cross_val_score(DropoutGLM(delta=0.05), x, y, cv=4)) > 0.9


class TestFit:
    def test_closed_form_without_intercept(self, rng):
        x, y = intercept_free(rng)
        est = DropoutGLM(delta=0.3, fit_intercept=False).fit(x, y)
        np.testing.assert_allclose(est.coef_, dropout_ridge(Dataset(x, y), 0.3).beta, atol=1e-12)
        assert est.intercept_ == 0.0 and est.delta_ == 0.3

    def test_intercept_not_dropped(self, rng):
        x, y = intercept_free(rng)
        y = y + 5.0
        est = DropoutGLM(delta=0.5).fit(x, y)
        # the constant column carries no penalty, so the intercept tracks the mean
        assert abs(est.intercept_ - 5.0) < 0.3

    def test_zero_delta_is_mle(self, rng):
        x, y = intercept_free(rng)
        est = DropoutGLM(delta=0.0, fit_intercept=False).fit(x, y)
        np.testing.assert_allclose(est.coef_, fit_mle("linear", Dataset(x, y)).beta, atol=1e-10)

    def test_logistic_exact(self, rng):
        x = rng.standard_normal((80, 2))
        y = (rng.random(80) < 1 / (1 + np.exp(-x @ [1.0, -1.0]))).astype(float)
        est = DropoutGLM("logistic", delta=0.3, fit_intercept=False).fit(x, y)
        np.testing.assert_allclose(est.coef_, solve_exact_gd("logistic", Dataset(x, y), 0.3).beta, atol=1e-7)
        p = est.predict(x)
        assert np.all((p > 0) & (p < 1))

    @pytest.mark.parametrize("method", ["sgd", "saa", "mlmc"])
    def test_stochastic_methods_close(self, rng, method):
        x, y = intercept_free(rng, 40)
        kw = dict(budget=200_000, lr=0.01, masks_per_row=64, replicas=60)
        est = DropoutGLM(delta=0.2, method=method, fit_intercept=False, random_state=0, **kw).fit(x, y)
        target = dropout_ridge(Dataset(x, y), 0.2).beta
        assert np.max(np.abs(est.coef_ - target)) < 0.2
        again = DropoutGLM(delta=0.2, method=method, fit_intercept=False, random_state=0, **kw).fit(x, y)
        np.testing.assert_array_equal(est.coef_, again.coef_)

    def test_auto_delta(self, rng):
        x, y = intercept_free(rng, 200)
        est = DropoutGLM(delta="auto", alpha=0.1).fit(x, y)
        assert 0 < est.delta_ <= 0.9

    def test_auto_delta_needs_two_rows(self):
        with pytest.raises(ValueError, match="n_samples=1"):
            DropoutGLM(delta="auto").fit([[1.0]], [1.0])

    def test_bad_method(self, rng):
        x, y = intercept_free(rng)
        with pytest.raises(ValueError, match="method"):
            DropoutGLM(method="lbfgs").fit(x, y)

    def test_closed_form_only_linear(self, rng):
        x = rng.standard_normal((20, 2))
        with pytest.raises(ValueError, match="linear"):
            DropoutGLM("logistic", method="closed_form").fit(x, (x[:, 0] > 0).astype(float))

    def test_log_likelihood(self, rng):
        x, y = intercept_free(rng)
        est = DropoutGLM(delta=0.0).fit(x, y)
        shrunk = DropoutGLM(delta=0.5).fit(x, y)
        # both share the delta = 0 dispersion, and the MLE maximizes over beta
        assert est.phi_ == pytest.approx(shrunk.phi_, rel=1e-12)
        assert est.log_likelihood(x, y) > shrunk.log_likelihood(x, y)
