"""Logistic fitting against closed-form and large-sample checks.

Frozen values: the intercept-only MLE with 3 successes / 1 failure is
logit(0.75) = ln 3 = 1.0986122886681098.
"""

import numpy as np
import pytest
from scipy.special import expit

from cif_fusion import DegenerateLabelsError, SeparationError
from cif_fusion.logistic import LogisticFit, fit_logistic


class TestFitLogistic:
    def test_intercept_only_closed_form(self):
        fit = fit_logistic(np.zeros((4, 0)), [1.0, 1.0, 1.0, 0.0])
        assert fit.converged
        assert fit.intercept == pytest.approx(np.log(3.0), abs=1e-9)
        assert fit.coefficients.size == 0
        assert fit.predict(np.zeros((2, 5))) == pytest.approx([0.75, 0.75], abs=1e-9)

    def test_large_sample_recovery(self):
        rng = np.random.default_rng(11)
        n = 50000
        x = rng.standard_normal((n, 1))
        y = (rng.uniform(size=n) < expit(0.3 + 0.8 * x[:, 0])).astype(float)
        fit = fit_logistic(x, y)
        assert fit.converged
        assert fit.intercept == pytest.approx(0.3, abs=0.05)
        assert fit.coefficients[0] == pytest.approx(0.8, abs=0.05)

    def test_affine_invariance_of_predictions(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((400, 2))
        y = (rng.uniform(size=400) < expit(-0.2 + X @ [0.7, -0.4])).astype(float)
        f1 = fit_logistic(X, y)
        X2 = np.column_stack([3.0 * X[:, 0] - 5.0, -0.25 * X[:, 1] + 2.0])
        f2 = fit_logistic(X2, y)
        np.testing.assert_allclose(f1.predict(X), f2.predict(X2), atol=1e-6, rtol=0)

    def test_degenerate_labels_with_covariates(self):
        with pytest.raises(DegenerateLabelsError, match="degenerate labels"):
            fit_logistic(np.random.default_rng(0).standard_normal((10, 1)), np.ones(10))

    def test_intercept_only_one_class_gives_infinite_intercept(self):
        fit = fit_logistic(np.zeros((5, 0)), np.ones(5))
        assert fit.intercept == np.inf
        assert fit.predict(np.zeros((3, 2))) == pytest.approx([1.0, 1.0, 1.0], abs=0)
        fit0 = fit_logistic(np.zeros((5, 0)), np.zeros(5))
        assert fit0.intercept == -np.inf
        assert fit0.predict(np.zeros((1, 2))) == pytest.approx([0.0], abs=0)

    def test_separation(self):
        # a separated design on a tiny feature scale: the natural-scale
        # coefficient passes 1e3 while the score is still far from tolerance
        x = np.concatenate([-np.linspace(1e-3, 2e-3, 20), np.linspace(1e-3, 2e-3, 20)]).reshape(-1, 1)
        y = np.concatenate([np.zeros(20), np.ones(20)])
        with pytest.raises(SeparationError, match="separation"):
            fit_logistic(x, y)

    def test_saturated_separation_on_unit_scale_converges(self):
        # with unit-scale features the link saturates in float arithmetic
        # (score hits exact zero near norm 37), which is below the norm
        # threshold defining separation, so the fit reports convergence
        x = np.concatenate([-np.linspace(1, 2, 20), np.linspace(1, 2, 20)]).reshape(-1, 1)
        y = np.concatenate([np.zeros(20), np.ones(20)])
        fit = fit_logistic(x, y)
        assert fit.converged
        assert fit.predict(np.array([[2.0]]))[0] == pytest.approx(1.0, abs=1e-12)

    def test_label_validation(self):
        with pytest.raises(ValueError, match="labels"):
            fit_logistic(np.zeros((3, 1)), [0.0, 0.5, 1.0])
        with pytest.raises(ValueError, match="labels"):
            fit_logistic(np.zeros((3, 1)), [0.0, 1.0])


class TestConstantFit:
    def test_predicts_given_probability(self):
        fit = LogisticFit.constant(0.3)
        assert fit.predict(np.zeros((4, 7))) == pytest.approx([0.3] * 4, abs=1e-12)

    def test_boundary_probabilities_exact(self):
        assert LogisticFit.constant(1.0).predict(np.zeros((1, 3)))[0] == 1.0
        assert LogisticFit.constant(0.0).predict(np.zeros((1, 3)))[0] == 0.0

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            LogisticFit.constant(1.5)
