"""
Dataset layouts — RCT, external-control (EC) and combined samples.

Covariates are stored without an intercept column; the model modules
prepend it. Binary outcomes are kept as float 0.0/1.0 so both outcome
kinds share one numeric path. All arrays are made read-only on
construction, so validated datasets can be shared freely.

Column semantics are assumed identical between RCT and EC files
(same covariates, same measurement scale); nothing here can check that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, auto
from typing import Optional, Sequence, Union

import numpy as np

from ecborrow.errors import ArmMissingError, DatasetError, ShapeMismatchError


class OutcomeKind(str, Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


class ViolationKind(Enum):
    NON_FINITE_VALUE = auto()
    NON_BINARY_TREATMENT = auto()
    NON_BINARY_OUTCOME = auto()
    ARM_MISSING = auto()
    SHAPE_MISMATCH = auto()


@dataclass(frozen=True)
class DatasetViolation:
    """One broken invariant, located as precisely as possible."""
    kind: ViolationKind
    reason: str
    row: Optional[int] = None
    column: Optional[str] = None


class DatasetValidationError(DatasetError):
    """Raised by validate(); carries every violation found."""

    def __init__(self, violations: list[DatasetViolation]):
        self.violations = violations
        head = "; ".join(v.reason for v in violations[:3])
        more = f" (+{len(violations) - 3} more)" if len(violations) > 3 else ""
        super().__init__(f"{len(violations)} dataset violation(s): {head}{more}")

    @property
    def kinds(self) -> set[ViolationKind]:
        return {v.kind for v in self.violations}


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _default_names(p: int) -> tuple[str, ...]:
    return tuple(f"x{j + 1}" for j in range(p))


@dataclass(frozen=True, eq=False)
class _Covariates:
    X: np.ndarray
    Y: np.ndarray
    outcome_kind: OutcomeKind = OutcomeKind.CONTINUOUS
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise ShapeMismatchError(f"covariate matrix must be 2-D, got {X.ndim}-D")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "Y", _frozen(np.asarray(self.Y, dtype=float).ravel()))
        object.__setattr__(self, "outcome_kind", OutcomeKind(self.outcome_kind))
        names = tuple(self.covariate_names) or _default_names(X.shape[1])
        if len(names) != X.shape[1]:
            raise ShapeMismatchError(f"{len(names)} covariate names for {X.shape[1]} columns")
        object.__setattr__(self, "covariate_names", names)
        if self.Y.shape[0] != X.shape[0]:
            raise ShapeMismatchError(f"outcome length {self.Y.shape[0]} != {X.shape[0]} rows")

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def p(self) -> int:
        return int(self.X.shape[1])


@dataclass(frozen=True, eq=False)
class RctDataset(_Covariates):
    """Randomized trial sample: covariates, treatment, outcome."""
    A: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "A", _frozen(np.asarray(self.A, dtype=float).ravel()))
        if self.A.shape[0] != self.n:
            raise ShapeMismatchError(f"treatment length {self.A.shape[0]} != {self.n} rows")

    @property
    def n_treated(self) -> int:
        return int(np.sum(self.A == 1))

    @property
    def n_control(self) -> int:
        return int(np.sum(self.A == 0))

    def take(self, rows: Sequence[int]) -> "RctDataset":
        idx = np.asarray(rows, dtype=int)
        return RctDataset(X=self.X[idx], Y=self.Y[idx], A=self.A[idx],
                          outcome_kind=self.outcome_kind, covariate_names=self.covariate_names)

    def with_columns(self, columns: Sequence[int]) -> "RctDataset":
        cols = list(columns)
        return RctDataset(X=self.X[:, cols], Y=self.Y, A=self.A, outcome_kind=self.outcome_kind,
                          covariate_names=tuple(self.covariate_names[j] for j in cols))


@dataclass(frozen=True, eq=False)
class EcDataset(_Covariates):
    """External controls: treatment is implicitly 0 for every row."""

    @property
    def A(self) -> np.ndarray:
        return np.zeros(self.n)

    def take(self, rows: Sequence[int]) -> "EcDataset":
        idx = np.asarray(rows, dtype=int)
        return EcDataset(X=self.X[idx], Y=self.Y[idx], outcome_kind=self.outcome_kind,
                         covariate_names=self.covariate_names)

    def with_outcome(self, Y: np.ndarray, outcome_kind: Union[OutcomeKind, str, None] = None) -> "EcDataset":
        return EcDataset(X=self.X, Y=Y, outcome_kind=outcome_kind or self.outcome_kind,
                         covariate_names=self.covariate_names)

    def with_columns(self, columns: Sequence[int]) -> "EcDataset":
        cols = list(columns)
        return EcDataset(X=self.X[:, cols], Y=self.Y, outcome_kind=self.outcome_kind,
                         covariate_names=tuple(self.covariate_names[j] for j in cols))

    @classmethod
    def empty(cls, p: int, outcome_kind: OutcomeKind = OutcomeKind.CONTINUOUS,
              covariate_names: tuple[str, ...] = ()) -> "EcDataset":
        return cls(X=np.zeros((0, p)), Y=np.zeros(0), outcome_kind=outcome_kind,
                   covariate_names=covariate_names)


@dataclass(frozen=True, eq=False)
class CombinedDataset(_Covariates):
    """RCT rows first, then EC rows; R = 1 marks RCT rows."""
    A: np.ndarray = field(default_factory=lambda: np.zeros(0))
    R: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "A", _frozen(np.asarray(self.A, dtype=float).ravel()))
        object.__setattr__(self, "R", _frozen(np.asarray(self.R, dtype=float).ravel()))
        if self.A.shape[0] != self.n or self.R.shape[0] != self.n:
            raise ShapeMismatchError("treatment/source vectors must match the row count")
        if np.any((self.R == 0) & (self.A != 0)):
            raise DatasetError("external rows (R=0) must have A=0")

    @property
    def n_rct(self) -> int:
        return int(np.sum(self.R == 1))

    @property
    def n_ec(self) -> int:
        return int(np.sum(self.R == 0))

    def take(self, rows: Sequence[int]) -> "CombinedDataset":
        idx = np.asarray(rows, dtype=int)
        return CombinedDataset(X=self.X[idx], Y=self.Y[idx], A=self.A[idx], R=self.R[idx],
                               outcome_kind=self.outcome_kind, covariate_names=self.covariate_names)


AnyDataset = Union[RctDataset, EcDataset, CombinedDataset]


# -- Validation --

def collect_violations(dataset: AnyDataset, paired_rct: Optional[RctDataset] = None) -> list[DatasetViolation]:
    """Check every layout invariant and return what is broken (empty if clean)."""
    violations: list[DatasetViolation] = []
    names = dataset.covariate_names

    bad_rows, bad_cols = np.nonzero(~np.isfinite(dataset.X))
    for r, c in zip(bad_rows.tolist(), bad_cols.tolist()):
        violations.append(DatasetViolation(ViolationKind.NON_FINITE_VALUE,
                                           f"non-finite covariate at row {r}, column {names[c]}",
                                           row=r, column=names[c]))
    for r in np.flatnonzero(~np.isfinite(dataset.Y)).tolist():
        violations.append(DatasetViolation(ViolationKind.NON_FINITE_VALUE,
                                           f"non-finite outcome at row {r}", row=r, column="y"))

    if dataset.outcome_kind is OutcomeKind.BINARY:
        finite = np.isfinite(dataset.Y)
        for r in np.flatnonzero(finite & (dataset.Y != 0) & (dataset.Y != 1)).tolist():
            violations.append(DatasetViolation(ViolationKind.NON_BINARY_OUTCOME,
                                               f"binary outcome expected at row {r}, got {dataset.Y[r]}",
                                               row=r, column="y"))

    if isinstance(dataset, (RctDataset, CombinedDataset)):
        A = dataset.A
        for r in np.flatnonzero((A != 0) & (A != 1)).tolist():
            violations.append(DatasetViolation(ViolationKind.NON_BINARY_TREATMENT,
                                               f"treatment must be 0/1 at row {r}, got {A[r]}",
                                               row=r, column="a"))
        if isinstance(dataset, RctDataset):
            if dataset.n_treated == 0:
                violations.append(DatasetViolation(ViolationKind.ARM_MISSING, "RCT has no treated units", column="a"))
            if dataset.n_control == 0:
                violations.append(DatasetViolation(ViolationKind.ARM_MISSING, "RCT has no control units", column="a"))

    if paired_rct is not None:
        if dataset.p != paired_rct.p:
            violations.append(DatasetViolation(ViolationKind.SHAPE_MISMATCH,
                                               f"EC has {dataset.p} covariates, RCT has {paired_rct.p}"))
        if dataset.outcome_kind is not paired_rct.outcome_kind:
            violations.append(DatasetViolation(ViolationKind.SHAPE_MISMATCH,
                                               f"EC outcome kind {dataset.outcome_kind.value} "
                                               f"!= RCT {paired_rct.outcome_kind.value}"))
    return violations


def validate(dataset: AnyDataset, paired_rct: Optional[RctDataset] = None) -> AnyDataset:
    """Return the dataset unchanged if it is clean, else raise with all violations."""
    violations = collect_violations(dataset, paired_rct)
    if violations:
        raise DatasetValidationError(violations)
    return dataset


# -- Subset / combine algebra --

def combine(rct: RctDataset, ec_subset: Optional[EcDataset] = None) -> CombinedDataset:
    """Stack RCT rows then EC rows, flagging the source in R."""
    if ec_subset is None:
        ec_subset = EcDataset.empty(rct.p, rct.outcome_kind, rct.covariate_names)
    if ec_subset.p != rct.p:
        raise ShapeMismatchError(f"EC has {ec_subset.p} covariates, RCT has {rct.p}")
    k = ec_subset.n
    return CombinedDataset(
        X=np.vstack([rct.X, ec_subset.X]),
        Y=np.concatenate([rct.Y, ec_subset.Y]),
        A=np.concatenate([rct.A, np.zeros(k)]),
        R=np.concatenate([np.ones(rct.n), np.zeros(k)]),
        outcome_kind=rct.outcome_kind,
        covariate_names=rct.covariate_names,
    )


def controls_only(dataset: AnyDataset) -> AnyDataset:
    """Rows with A=0, original order preserved."""
    if isinstance(dataset, EcDataset):
        return dataset
    return dataset.take(np.flatnonzero(dataset.A == 0))


def require_arms(dataset: Union[RctDataset, CombinedDataset]) -> None:
    if not np.any(dataset.A == 1):
        raise ArmMissingError("no treated units")
    if not np.any(dataset.A == 0):
        raise ArmMissingError("no control units")
