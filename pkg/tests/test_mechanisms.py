import unittest

import numpy as np

from ecborrow.data.datasets import OutcomeKind
from ecborrow.errors import SimulationError
from ecborrow.simulation.mechanisms import (
    MECHANISMS, N_OUTLIERS, TooFewEcsError, UnknownMechanismError, default_family, generate, true_ate,
)


class TestDeterminism(unittest.TestCase):
    def test_same_seed_same_data(self):
        for mechanism in MECHANISMS:
            a = generate(mechanism, 60, 80, seed=42)
            b = generate(mechanism, 60, 80, seed=42)
            np.testing.assert_array_equal(a.rct.X, b.rct.X)
            np.testing.assert_array_equal(a.rct.A, b.rct.A)
            np.testing.assert_array_equal(a.rct.Y, b.rct.Y)
            np.testing.assert_array_equal(a.ec.Y, b.ec.Y)

    def test_different_seed_different_data(self):
        a = generate("demo", 60, 80, seed=1)
        b = generate("demo", 60, 80, seed=2)
        self.assertFalse(np.array_equal(a.ec.Y, b.ec.Y))

    def test_sizes_and_meta(self):
        data = generate("mech2", 100, 400, seed=3)
        self.assertEqual((data.rct.n, data.ec.n, data.rct.p), (100, 400, 2))
        meta = data.meta()
        self.assertEqual(meta["mechanism"], "mech2")
        self.assertEqual(meta["seed"], 3)
        self.assertEqual(meta["true_ate"], 3.0)
        self.assertEqual(meta["covariates"], ["x1", "x2"])


class TestMechanisms(unittest.TestCase):
    def test_mech1_binary_with_outliers(self):
        data = generate("mech1", 100, 400, seed=4)
        self.assertIs(data.rct.outcome_kind, OutcomeKind.BINARY)
        np.testing.assert_array_equal(data.ec.Y[-N_OUTLIERS:], 1.0)
        self.assertTrue(np.all(data.ec.X[-N_OUTLIERS:, 0] >= 1.8))
        self.assertTrue(set(np.unique(data.rct.Y)) <= {0.0, 1.0})

    def test_mech1_true_ate(self):
        self.assertAlmostEqual(true_ate("mech1"), 0.368, delta=0.001)

    def test_mech2_corner_outliers(self):
        data = generate("mech2", 100, 400, seed=5)
        np.testing.assert_array_equal(data.ec.Y[-N_OUTLIERS:], -5.0)
        self.assertTrue(np.all(data.ec.X[-N_OUTLIERS:] >= 1.8))
        self.assertTrue(np.all(data.rct.X <= 2.0))

    def test_demo_and_exchangeable_effect(self):
        self.assertEqual(true_ate("demo"), -1.0)
        self.assertEqual(true_ate("exchangeable"), -1.0)

    def test_exchangeable_ecs_follow_control_law(self):
        data = generate("exchangeable", 50, 4000, seed=6)
        resid = data.ec.Y - (1.0 + data.ec.X[:, 0])
        self.assertLess(abs(resid.mean()), 0.05)
        self.assertAlmostEqual(resid.std(), 0.5, delta=0.05)

    def test_demo_ecs_are_mostly_shifted(self):
        data = generate("demo", 50, 4000, seed=7)
        resid = data.ec.Y - (1.0 + data.ec.X[:, 0])
        # 70% carry bias 0.8 + 0.5x with E[x] = 0
        self.assertAlmostEqual(resid.mean(), 0.56, delta=0.06)

    def test_both_arms_present(self):
        data = generate("demo", 100, 200, seed=8)
        self.assertGreater(data.rct.n_treated, 0)
        self.assertGreater(data.rct.n_control, 0)

    def test_default_family(self):
        self.assertEqual(default_family("mech1"), "binomial")
        self.assertEqual(default_family("mech2"), "gaussian")


class TestMechanismErrors(unittest.TestCase):
    def test_too_few_ecs(self):
        with self.assertRaises(TooFewEcsError):
            generate("mech1", 100, N_OUTLIERS - 1)
        with self.assertRaises(TooFewEcsError):
            generate("demo", 100, 9)

    def test_unknown_mechanism(self):
        with self.assertRaises(UnknownMechanismError):
            generate("mech3", 100, 100)
        with self.assertRaises(UnknownMechanismError):
            true_ate("mech3")

    def test_bad_sizes_and_seed(self):
        with self.assertRaises(SimulationError):
            generate("demo", 9, 100)
        with self.assertRaises(SimulationError):
            generate("mech2", 100, 100, seed=-1)


if __name__ == "__main__":
    unittest.main()
