import os
import tempfile
import unittest

import numpy as np
import pandas as pd

from ecborrow.data.datasets import (
    CombinedDataset, DatasetValidationError, EcDataset, OutcomeKind, RctDataset, ViolationKind,
    collect_violations, combine, controls_only, require_arms, validate,
)
from ecborrow.data.io import file_digest, read_ec_csv, read_rct_csv, write_ec_csv, write_rct_csv
from ecborrow.errors import ArmMissingError, DatasetError, ShapeMismatchError


def _rct(n=10, p=2, seed=0):
    rng = np.random.default_rng(seed)
    A = np.array([1, 0] * (n // 2), dtype=float)
    return RctDataset(X=rng.normal(size=(n, p)), Y=rng.normal(size=n), A=A)


class TestDatasets(unittest.TestCase):
    def test_arrays_are_read_only_copies(self):
        X = np.zeros((4, 1))
        rct = RctDataset(X=X, Y=np.zeros(4), A=[0, 1, 0, 1])
        X[0, 0] = 99.0
        self.assertEqual(rct.X[0, 0], 0.0)
        with self.assertRaises(ValueError):
            rct.Y[0] = 1.0

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            RctDataset(X=np.zeros((4, 2)), Y=np.zeros(3), A=np.zeros(4))
        with self.assertRaises(ShapeMismatchError):
            EcDataset(X=np.zeros((4, 2)), Y=np.zeros(4), covariate_names=("x1",))

    def test_default_covariate_names(self):
        self.assertEqual(_rct(p=3).covariate_names, ("x1", "x2", "x3"))

    def test_validate_collects_every_violation(self):
        X = np.zeros((4, 1))
        X[1, 0] = np.nan
        rct = RctDataset(X=X, Y=[0, 1, 2, 1], A=[1, 1, 2, 1], outcome_kind=OutcomeKind.BINARY)
        with self.assertRaises(DatasetValidationError) as ctx:
            validate(rct)
        kinds = ctx.exception.kinds
        self.assertIn(ViolationKind.NON_FINITE_VALUE, kinds)
        self.assertIn(ViolationKind.NON_BINARY_OUTCOME, kinds)
        self.assertIn(ViolationKind.NON_BINARY_TREATMENT, kinds)
        self.assertIn(ViolationKind.ARM_MISSING, kinds)

    def test_clean_dataset_passes(self):
        rct = _rct()
        self.assertIs(validate(rct), rct)
        self.assertEqual(collect_violations(rct), [])

    def test_ec_paired_with_rct(self):
        rct = _rct(p=2)
        ec = EcDataset(X=np.zeros((3, 3)), Y=np.zeros(3))
        kinds = {v.kind for v in collect_violations(ec, paired_rct=rct)}
        self.assertEqual(kinds, {ViolationKind.SHAPE_MISMATCH})

    def test_combine_layout(self):
        rct = _rct(n=6, p=2)
        ec = EcDataset(X=np.ones((3, 2)), Y=np.arange(3.0))
        data = combine(rct, ec)
        self.assertIsInstance(data, CombinedDataset)
        self.assertEqual((data.n_rct, data.n_ec), (6, 3))
        np.testing.assert_array_equal(data.R, [1] * 6 + [0] * 3)
        np.testing.assert_array_equal(data.A[6:], 0)
        np.testing.assert_array_equal(data.Y[6:], [0, 1, 2])

    def test_combine_empty_subset(self):
        rct = _rct()
        data = combine(rct, None)
        self.assertEqual(data.n_ec, 0)
        np.testing.assert_array_equal(data.X, rct.X)

    def test_combined_rejects_treated_external(self):
        with self.assertRaises(DatasetError):
            CombinedDataset(X=np.zeros((2, 1)), Y=np.zeros(2), A=[1, 1], R=[1, 0])

    def test_controls_only_and_arms(self):
        rct = _rct(n=8)
        ctrl = controls_only(rct)
        self.assertEqual(ctrl.n, 4)
        self.assertTrue(np.all(ctrl.A == 0))
        with self.assertRaises(ArmMissingError):
            require_arms(ctrl)


class TestCsvIo(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def test_write_read_write_is_byte_stable(self):
        rct = _rct(n=10, p=2, seed=3)
        first = os.path.join(self.dir, "a.csv")
        second = os.path.join(self.dir, "b.csv")
        write_rct_csv(rct, first)
        write_rct_csv(read_rct_csv(first), second)
        self.assertEqual(file_digest(first), file_digest(second))
        np.testing.assert_array_equal(read_rct_csv(first).X, rct.X)

    def test_ec_file_with_zero_treatment_column(self):
        rct = _rct(p=1)
        path = os.path.join(self.dir, "ec.csv")
        pd.DataFrame({"x1": [0.1, 0.2], "a": [0, 0], "y": [1.0, 2.0]}).to_csv(path, index=False)
        ec = read_ec_csv(path, rct=rct)
        self.assertEqual((ec.n, ec.p), (2, 1))

    def test_missing_cell_rejected(self):
        path = os.path.join(self.dir, "rct.csv")
        with open(path, "w") as f:
            f.write("x1,a,y\n0.1,1,2.0\n,0,1.0\n")
        with self.assertRaises(DatasetValidationError) as ctx:
            read_rct_csv(path)
        self.assertIn(ViolationKind.NON_FINITE_VALUE, ctx.exception.kinds)

    def test_binary_outcome_inferred(self):
        path = os.path.join(self.dir, "rct.csv")
        pd.DataFrame({"x1": [0.1, 0.2, 0.3, 0.4], "a": [1, 0, 1, 0], "y": [1, 0, 0, 1]}).to_csv(path, index=False)
        self.assertIs(read_rct_csv(path).outcome_kind, OutcomeKind.BINARY)
        self.assertIs(read_rct_csv(path, family="gaussian").outcome_kind, OutcomeKind.CONTINUOUS)

    def test_ec_round_trip(self):
        ec = EcDataset(X=np.array([[0.5], [1.5]]), Y=[1.25, -3.0])
        path = os.path.join(self.dir, "ec.csv")
        write_ec_csv(ec, path)
        back = read_ec_csv(path)
        np.testing.assert_array_equal(back.Y, ec.Y)


if __name__ == "__main__":
    unittest.main()
