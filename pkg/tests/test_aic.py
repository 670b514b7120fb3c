import unittest

import numpy as np
from scipy.special import expit

from ecborrow.models.aic import aic_score, select_covariates_aic


class TestForwardAic(unittest.TestCase):
    def test_single_informative_covariate_is_selected(self):
        hits = 0
        for seed in range(40):
            rng = np.random.default_rng(seed)
            X = rng.normal(size=(200, 3))
            y = 1.0 + 1.5 * X[:, 0] + rng.normal(size=200)
            if 0 in select_covariates_aic(X, y, "gaussian"):
                hits += 1
        self.assertGreaterEqual(hits, 38)

    def test_binomial_selection(self):
        rng = np.random.default_rng(21)
        X = rng.normal(size=(400, 2))
        y = rng.binomial(1, expit(2.0 * X[:, 1])).astype(float)
        selected = select_covariates_aic(X, y, "binomial")
        self.assertEqual(selected[0], 1)

    def test_pure_noise_usually_selects_nothing(self):
        empty = 0
        for seed in range(40):
            rng = np.random.default_rng(100 + seed)
            X = rng.normal(size=(200, 2))
            y = rng.normal(size=200)
            if not select_covariates_aic(X, y, "gaussian"):
                empty += 1
        self.assertGreater(empty, 20)

    def test_score_penalizes_parameters(self):
        rng = np.random.default_rng(22)
        X = rng.normal(size=(100, 2))
        y = rng.normal(size=100)
        base = aic_score(X, y, "gaussian", [])
        bigger = aic_score(X, y, "gaussian", [0, 1])
        # extra columns can lower -2 log L by at most a little on pure noise
        self.assertGreater(bigger, base - 8.0)


if __name__ == "__main__":
    unittest.main()
