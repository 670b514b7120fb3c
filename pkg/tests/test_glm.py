import unittest
from unittest import mock

import numpy as np
import scipy.linalg
from scipy.special import expit

from ecborrow.config import NumericsConfig
from ecborrow.errors import ModelError
from ecborrow.models.glm import (
    Family, InsufficientRowsError, NonconvergenceError, PerfectSeparationError, SingularDesignError,
    add_intercept, avg_hessian, fit_glm, log_likelihood, predict_mean, unit_gradient, unit_loss,
)


class TestGaussianGlm(unittest.TestCase):
    def test_matches_closed_form_ols(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(200, 3))
        y = 1.0 + X @ np.array([0.5, -2.0, 0.25]) + rng.normal(scale=0.3, size=200)
        fit = fit_glm(X, y, "gaussian")
        Xd = add_intercept(X)
        beta = np.linalg.solve(Xd.T @ Xd, Xd.T @ y)
        np.testing.assert_allclose(fit.coefficients, beta, atol=1e-10)
        self.assertTrue(fit.converged)
        self.assertEqual(fit.family, Family.GAUSSIAN)

    def test_rank_deficient_design(self):
        X = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
        with self.assertRaises(SingularDesignError):
            fit_glm(X, np.arange(10.0), "gaussian")

    def test_too_few_rows(self):
        with self.assertRaises(InsufficientRowsError):
            fit_glm(np.zeros((2, 2)), np.zeros(2), "gaussian")

    def test_log_likelihood_is_gaussian_ml(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(50, 1))
        y = X[:, 0] + rng.normal(size=50)
        fit = fit_glm(X, y, "gaussian")
        rss = np.sum((y - predict_mean(fit, X)) ** 2)
        expected = -0.5 * 50 * (np.log(2 * np.pi * rss / 50) + 1)
        self.assertAlmostEqual(log_likelihood(fit, X, y), expected, places=10)


class TestBinomialGlm(unittest.TestCase):
    def test_recovers_logit_coefficients(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(5000, 2))
        y = rng.binomial(1, expit(-0.5 + X @ np.array([1.0, -0.75]))).astype(float)
        fit = fit_glm(X, y, "binomial")
        np.testing.assert_allclose(fit.coefficients, [-0.5, 1.0, -0.75], atol=0.12)
        self.assertTrue(fit.converged)
        self.assertLess(fit.iterations, 25)

    def test_score_equations_at_optimum(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(300, 2))
        y = rng.binomial(1, expit(X[:, 0])).astype(float)
        fit = fit_glm(X, y, "binomial")
        score = add_intercept(X).T @ (y - predict_mean(fit, X))
        np.testing.assert_allclose(score, 0.0, atol=1e-4)

    def test_perfect_separation(self):
        x = np.linspace(-1, 1, 40)
        y = (x > 0).astype(float)
        with self.assertRaises(PerfectSeparationError):
            fit_glm(x, y, "binomial")

    def test_iteration_cap(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(100, 1))
        y = rng.binomial(1, expit(X[:, 0])).astype(float)
        with self.assertRaises(NonconvergenceError):
            fit_glm(X, y, "binomial", NumericsConfig(irls_max_iter=1))

    def test_non_binary_outcome_rejected(self):
        X = np.arange(10.0)
        with self.assertRaises(ModelError):
            fit_glm(X, X, "binomial")

    def test_large_intermediate_iterate_is_not_separation(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(200, 1))
        y = rng.binomial(1, expit(0.5 + 2.0 * X[:, 0])).astype(float)
        target = fit_glm(X, y, "binomial").coefficients
        numerics = NumericsConfig(separation_threshold=float(np.max(np.abs(target))) + 0.25)

        real_solve = scipy.linalg.cho_solve
        calls = []

        def overshoot_first(*args, **kwargs):
            calls.append(1)
            if len(calls) == 1:
                return 1.5 * target
            return real_solve(*args, **kwargs)

        with mock.patch("scipy.linalg.cho_solve", side_effect=overshoot_first):
            fit = fit_glm(X, y, "binomial", numerics)
        self.assertGreater(len(calls), 1)
        self.assertTrue(fit.converged)
        np.testing.assert_allclose(fit.coefficients, target, atol=1e-4)

    def test_separation_reported_at_iteration_cap(self):
        x = np.linspace(-1, 1, 40)
        y = (x > 0).astype(float)
        with self.assertRaises(PerfectSeparationError):
            fit_glm(x, y, "binomial", NumericsConfig(irls_max_iter=3, separation_threshold=1.0))


class TestUnitDerivatives(unittest.TestCase):
    def _check_gradient(self, family, y_draw):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(200, 2))
        y = y_draw(rng, X)
        fit = fit_glm(X, y, family)
        h = 1e-6
        for _ in range(100):
            x = rng.normal(size=2)
            yz = y_draw(rng, x.reshape(1, -1))[0]
            g = unit_gradient(fit, x, yz)
            fd = np.zeros_like(g)
            for j in range(g.shape[0]):
                step = np.zeros_like(g)
                step[j] = h
                up = fit.__class__(fit.coefficients + step, fit.family, True, 1, 0.0, 1.0)
                down = fit.__class__(fit.coefficients - step, fit.family, True, 1, 0.0, 1.0)
                fd[j] = (unit_loss(up, x, yz) - unit_loss(down, x, yz)) / (2 * h)
            np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-7)

    def test_gaussian_gradient_matches_finite_differences(self):
        self._check_gradient("gaussian", lambda rng, X: X[:, 0] + rng.normal(size=X.shape[0]))

    def test_binomial_gradient_matches_finite_differences(self):
        self._check_gradient("binomial", lambda rng, X: rng.binomial(1, expit(X[:, 0])).astype(float))

    def test_hessian_is_symmetric_positive_definite(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(100, 2))
        y = rng.binomial(1, expit(X[:, 0])).astype(float)
        H = avg_hessian(fit_glm(X, y, "binomial"), X)
        np.testing.assert_allclose(H, H.T)
        self.assertGreater(np.linalg.eigvalsh(H)[0], 0)

    def test_binomial_hessian_is_weighted_cross_product(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(150, 2))
        y = rng.binomial(1, expit(0.3 + X[:, 0] - X[:, 1])).astype(float)
        fit = fit_glm(X, y, "binomial")
        Xd = add_intercept(X)
        mu = expit(Xd @ fit.coefficients)
        expected = Xd.T @ np.diag(mu * (1 - mu)) @ Xd / X.shape[0]
        np.testing.assert_allclose(avg_hessian(fit, X), expected, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(avg_hessian(fit, X, y), expected, rtol=1e-12, atol=1e-14)


if __name__ == "__main__":
    unittest.main()
