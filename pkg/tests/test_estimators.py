import unittest

import numpy as np

from ecborrow.borrowing.estimators import (
    NuisanceEstimates, comparison_table, estimate_aipw, estimate_direct, estimate_full, estimate_rct,
    fit_nuisances,
)
from ecborrow.data.datasets import EcDataset, RctDataset, combine
from ecborrow.errors import ArmMissingError, ConfigError, EcBorrowError, ShapeMismatchError
from ecborrow.simulation.mechanisms import gen_demo, gen_exchangeable


def _linear_rct(n=200, seed=0, shift=0.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 1))
    A = rng.binomial(1, 0.5, size=n).astype(float)
    Y = 1 + X[:, 0] - A + rng.normal(scale=0.5, size=n) + shift
    return RctDataset(X=X, Y=Y, A=A)


class TestDirect(unittest.TestCase):
    def test_trivial_difference(self):
        rct = RctDataset(X=np.arange(6.0).reshape(-1, 1), Y=[1, 0, 1, 0, 1, 0], A=[1, 0, 1, 0, 1, 0])
        report = estimate_direct(rct)
        self.assertEqual(report.estimate, 1.0)
        self.assertEqual(report.se, 0.0)
        self.assertAlmostEqual(float(np.mean(report.phi)), report.estimate)

    def test_missing_arm(self):
        rct = RctDataset(X=np.zeros((4, 1)), Y=np.zeros(4), A=np.ones(4))
        with self.assertRaises(ArmMissingError):
            estimate_direct(rct)
        with self.assertRaises(ArmMissingError):
            estimate_rct(rct, "gaussian")


class TestNuisances(unittest.TestCase):
    def test_known_ps_skips_logistic_fit(self):
        nuis = fit_nuisances(_linear_rct(), "gaussian", known_ps=0.5)
        np.testing.assert_array_equal(nuis.ps_hat, 0.5)

    def test_fitted_ps_near_design_probability(self):
        nuis = fit_nuisances(_linear_rct(n=10000, seed=1), "gaussian")
        self.assertLess(abs(nuis.ps_hat.mean() - 0.5), 0.02)

    def test_trim_clamps(self):
        nuis = NuisanceEstimates.from_arrays([0.001, 0.5, 0.999], [0, 0, 0], [0, 0, 0], trim=0.01)
        np.testing.assert_allclose(nuis.ps_hat, [0.01, 0.5, 0.99])

    def test_from_arrays_length_check(self):
        with self.assertRaises(ShapeMismatchError):
            NuisanceEstimates.from_arrays([0.5, 0.5], [0.0], [0.0, 0.0])

    def test_kernel_regressor(self):
        nuis = fit_nuisances(_linear_rct(n=120, seed=2), "gaussian", regressor="kernel")
        self.assertTrue(np.all(np.isfinite(nuis.mu1_hat)))
        self.assertEqual(nuis.n, 120)

    def test_out_of_range_known_ps_is_config_error(self):
        rct = _linear_rct(n=50)
        for bad in (1.0, 0.0, -0.2, np.full(50, 1.5)):
            with self.assertRaises(ConfigError):
                fit_nuisances(rct, "gaussian", known_ps=bad)
        with self.assertRaises(EcBorrowError):
            estimate_rct(rct, "gaussian", known_ps=1.0)


class TestAipw(unittest.TestCase):
    def test_phi_identities(self):
        rct = _linear_rct(seed=3)
        report = estimate_rct(rct, "gaussian").aipw
        n = report.phi.shape[0]
        self.assertAlmostEqual(float(report.phi.mean()), report.estimate, places=12)
        self.assertAlmostEqual(report.se ** 2 * n, float(report.phi.var(ddof=1)), places=10)

    def test_reference_gives_bias_and_mse(self):
        rct = _linear_rct(seed=4)
        data = combine(rct)
        report = estimate_aipw(data, fit_nuisances(data, "gaussian"), reference=-1.0)
        self.assertAlmostEqual(report.bias, report.estimate + 1.0)
        self.assertAlmostEqual(report.mse, report.bias ** 2 + report.se ** 2, places=12)

    def test_noiseless_with_exact_outcome_models(self):
        X = np.linspace(-1, 1, 20).reshape(-1, 1)
        A = np.array([1.0, 0.0] * 10)
        Y = 2 + X[:, 0] + 3 * A
        rct = RctDataset(X=X, Y=Y, A=A)
        nuis = NuisanceEstimates.from_arrays(np.full(20, 0.5), 5 + X[:, 0], 2 + X[:, 0])
        self.assertAlmostEqual(estimate_aipw(rct, nuis).estimate, 3.0, places=12)

    def test_empty_borrowing_equals_rct_only(self):
        rct = _linear_rct(seed=5)
        rct_only = estimate_rct(rct, "gaussian").aipw
        data = combine(rct, None)
        pooled = estimate_aipw(data, fit_nuisances(data, "gaussian"))
        self.assertEqual(pooled.estimate, rct_only.estimate)
        self.assertEqual(pooled.se, rct_only.se)

    def test_known_ps_changes_only_propensity(self):
        rct = _linear_rct(seed=6)
        fitted = fit_nuisances(rct, "gaussian")
        known = fit_nuisances(rct, "gaussian", known_ps=0.5)
        np.testing.assert_array_equal(fitted.mu1_hat, known.mu1_hat)
        np.testing.assert_array_equal(fitted.mu0_hat, known.mu0_hat)
        manual = NuisanceEstimates.from_arrays(np.full(rct.n, 0.5), fitted.mu1_hat, fitted.mu0_hat)
        self.assertEqual(estimate_aipw(rct, known).estimate, estimate_aipw(rct, manual).estimate)

    def test_translation_equivariance(self):
        base = estimate_rct(_linear_rct(seed=7), "gaussian")
        shifted = estimate_rct(_linear_rct(seed=7, shift=10.0), "gaussian")
        self.assertAlmostEqual(base.direct.estimate, shifted.direct.estimate, delta=1e-8)
        self.assertAlmostEqual(base.aipw.estimate, shifted.aipw.estimate, delta=1e-8)

    def test_double_robustness_with_misspecified_outcome_model(self):
        rng = np.random.default_rng(8)
        errors = []
        for _ in range(2000):
            X = rng.uniform(0, 2, size=(500, 2))
            A = rng.binomial(1, 0.5, size=500).astype(float)
            Y = 2 * X[:, 0] + 2 * X[:, 1] + 3 * A + rng.normal(scale=0.5, size=500)
            rct = RctDataset(X=X, Y=Y, A=A)
            m1 = np.full(500, Y[A == 1].mean())
            m0 = np.full(500, Y[A == 0].mean())
            nuis = NuisanceEstimates.from_arrays(np.full(500, 0.5), m1, m0)
            errors.append(estimate_aipw(rct, nuis).estimate - 3.0)
        errors = np.asarray(errors)
        self.assertLess(abs(errors.mean()), 0.02)
        self.assertLess(abs(errors.mean()), 3 * errors.std(ddof=1) / np.sqrt(errors.size))


class TestFullBorrowing(unittest.TestCase):
    def test_equals_aipw_on_combined_sample(self):
        data = gen_demo(100, 200, seed=9)
        full = estimate_full(data.rct, data.ec, "gaussian", reference=-1.0)
        pooled = combine(data.rct, data.ec)
        direct = estimate_aipw(pooled, fit_nuisances(pooled, "gaussian"), reference=-1.0)
        self.assertEqual(full.estimate, direct.estimate)
        self.assertEqual(full.k, 200)
        self.assertEqual(full.n_used, 300)

    def test_comparison_table(self):
        data = gen_demo(100, 200, seed=10)
        rct = estimate_rct(data.rct, "gaussian")
        full = estimate_full(data.rct, data.ec, "gaussian")
        table = comparison_table([rct.direct, rct.aipw, full], reference=-1.0)
        self.assertEqual(list(table.columns), ["estimator", "estimate", "bias", "sd", "mse", "k_star"])
        self.assertEqual(table["estimator"].tolist(), ["direct", "aipw", "full"])
        np.testing.assert_allclose(table["mse"], table["bias"] ** 2 + table["sd"] ** 2, atol=1e-12)

    def test_empty_ec_covariate_mismatch(self):
        rct = _linear_rct()
        with self.assertRaises(ShapeMismatchError):
            estimate_full(rct, EcDataset(X=np.zeros((3, 2)), Y=np.zeros(3)), "gaussian")

    def test_exchangeable_full_borrowing_is_unbiased(self):
        reps = 200
        errors = np.array([
            estimate_full(d.rct, d.ec, "gaussian").estimate - d.true_ate
            for d in (gen_exchangeable(100, 200, seed=3000 + r) for r in range(reps))
        ])
        mc_se = errors.std(ddof=1) / np.sqrt(reps)
        self.assertLess(abs(errors.mean()), 3 * mc_se)


if __name__ == "__main__":
    unittest.main()
