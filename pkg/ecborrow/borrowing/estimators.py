"""
Treatment-effect estimators.

    direct   difference of arm means on the RCT
    aipw     augmented IPW on the RCT alone
    subset   augmented IPW on the RCT pooled with a borrowing subset
    full     augmented IPW on the RCT pooled with every EC

Every AIPW estimate is the sample mean of the per-unit influence values

    phi_i = A(Y - m1)/e - (1 - A)(Y - m0)/(1 - e) + m1 - m0

taken over the n units actually summed (RCT rows plus borrowed ECs),
and its variance is var(phi)/n with the n-1 sample variance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from ecborrow.data.datasets import CombinedDataset, EcDataset, RctDataset, combine, require_arms
from ecborrow.errors import ArmMissingError, ConfigError, ShapeMismatchError
from ecborrow.models.glm import Family, fit_glm, predict_mean
from ecborrow.models.kernel_ridge import fit_kernel_ridge, predict_kernel_ridge

logger = logging.getLogger(__name__)

TwoArmDataset = Union[RctDataset, CombinedDataset]


@dataclass(frozen=True, eq=False)
class NuisanceEstimates:
    """Propensity and arm-wise outcome regressions evaluated on every row."""
    ps_hat: np.ndarray
    mu1_hat: np.ndarray
    mu0_hat: np.ndarray
    trim: float = 0.01

    @classmethod
    def from_arrays(cls, ps_hat, mu1_hat, mu0_hat, trim: float = 0.01) -> "NuisanceEstimates":
        """Wrap externally fitted nuisances; the propensity is clamped to [trim, 1 - trim]."""
        ps = np.clip(np.asarray(ps_hat, dtype=float).ravel(), trim, 1.0 - trim)
        mu1 = np.asarray(mu1_hat, dtype=float).ravel()
        mu0 = np.asarray(mu0_hat, dtype=float).ravel()
        if not (ps.shape == mu1.shape == mu0.shape):
            raise ShapeMismatchError("nuisance vectors must have equal length")
        return cls(ps_hat=ps, mu1_hat=mu1, mu0_hat=mu0, trim=trim)

    @property
    def n(self) -> int:
        return int(self.ps_hat.shape[0])


@dataclass(frozen=True, eq=False)
class EstimateReport:
    estimator: str
    estimate: float
    se: float
    phi: np.ndarray = field(repr=False)
    n_used: int
    bias: Optional[float] = None
    mse: Optional[float] = None
    k: Optional[int] = None

    @property
    def variance(self) -> float:
        return self.se ** 2

    def against(self, reference: float) -> "EstimateReport":
        """Same estimate with bias and MSE measured against `reference`."""
        bias = self.estimate - float(reference)
        return EstimateReport(
            estimator=self.estimator, estimate=self.estimate, se=self.se, phi=self.phi,
            n_used=self.n_used, bias=bias, mse=bias ** 2 + self.se ** 2, k=self.k,
        )

    def renamed(self, estimator: str, k: Optional[int] = None) -> "EstimateReport":
        return EstimateReport(
            estimator=estimator, estimate=self.estimate, se=self.se, phi=self.phi, n_used=self.n_used,
            bias=self.bias, mse=self.mse, k=self.k if k is None else k,
        )

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "estimate": self.estimate,
            "se": self.se,
            "bias": self.bias,
            "mse": self.mse,
            "n_used": self.n_used,
            "k": self.k,
        }


@dataclass(frozen=True)
class RctEstimates:
    direct: EstimateReport
    aipw: EstimateReport


# -- Direct --

def estimate_direct(rct: RctDataset) -> EstimateReport:
    """Difference in arm means with the unpooled two-sample standard error."""
    require_arms(rct)
    treated = rct.A == 1
    y1, y0 = rct.Y[treated], rct.Y[~treated]
    n1t, n1c = y1.shape[0], y0.shape[0]
    estimate = float(y1.mean() - y0.mean())
    s1 = y1.var(ddof=1) if n1t > 1 else 0.0
    s0 = y0.var(ddof=1) if n1c > 1 else 0.0
    se = float(np.sqrt(s1 / n1t + s0 / n1c))
    n = rct.n
    phi = estimate + n * (np.where(treated, (rct.Y - y1.mean()) / n1t, 0.0)
                          - np.where(~treated, (rct.Y - y0.mean()) / n1c, 0.0))
    return EstimateReport(estimator="direct", estimate=estimate, se=se, phi=phi, n_used=n, k=0)


# -- Nuisances --

def _fit_arm(X: np.ndarray, y: np.ndarray, X_all: np.ndarray, family: Family, regressor: str) -> np.ndarray:
    if regressor == "kernel":
        return predict_kernel_ridge(fit_kernel_ridge(X, y), X_all)
    return predict_mean(fit_glm(X, y, family), X_all)


def fit_nuisances(
    dataset: TwoArmDataset,
    family,
    trim: float = 0.01,
    known_ps: Optional[Union[float, np.ndarray]] = None,
    regressor: str = "glm",
) -> NuisanceEstimates:
    """
    Propensity by logistic regression of A on X (unless known), outcome
    regressions per arm. In a combined sample the control regression uses
    every A=0 row, RCT controls and borrowed ECs alike.
    """
    family = Family.coerce(family)
    require_arms(dataset)
    treated = dataset.A == 1

    if known_ps is not None:
        ps = np.broadcast_to(np.asarray(known_ps, dtype=float), (dataset.n,)).copy()
        if np.any((ps <= 0) | (ps >= 1)):
            raise ConfigError("known propensity scores must lie in (0, 1)")
    else:
        ps = predict_mean(fit_glm(dataset.X, dataset.A, Family.BINOMIAL), dataset.X)

    mu1 = _fit_arm(dataset.X[treated], dataset.Y[treated], dataset.X, family, regressor)
    mu0 = _fit_arm(dataset.X[~treated], dataset.Y[~treated], dataset.X, family, regressor)
    return NuisanceEstimates(ps_hat=np.clip(ps, trim, 1.0 - trim), mu1_hat=mu1, mu0_hat=mu0, trim=trim)


# -- AIPW --

def aipw_scores(dataset: TwoArmDataset, nuisances: NuisanceEstimates) -> np.ndarray:
    if nuisances.n != dataset.n:
        raise ShapeMismatchError(f"nuisances cover {nuisances.n} rows, dataset has {dataset.n}")
    A, Y = dataset.A, dataset.Y
    e, m1, m0 = nuisances.ps_hat, nuisances.mu1_hat, nuisances.mu0_hat
    return A * (Y - m1) / e - (1 - A) * (Y - m0) / (1 - e) + m1 - m0


def estimate_aipw(
    dataset: TwoArmDataset,
    nuisances: NuisanceEstimates,
    reference: Optional[float] = None,
    estimator: str = "aipw",
    k: Optional[int] = None,
) -> EstimateReport:
    phi = aipw_scores(dataset, nuisances)
    n = phi.shape[0]
    if n < 2:
        raise ArmMissingError("AIPW needs at least two rows")
    estimate = float(phi.mean())
    se = float(phi.std(ddof=1) / np.sqrt(n))
    if k is None and isinstance(dataset, CombinedDataset):
        k = dataset.n_ec
    report = EstimateReport(estimator=estimator, estimate=estimate, se=se, phi=phi, n_used=n, k=k)
    return report.against(reference) if reference is not None else report


def estimate_rct(
    rct: RctDataset,
    family,
    known_ps: Optional[Union[float, np.ndarray]] = None,
    trim: float = 0.01,
    regressor: str = "glm",
) -> RctEstimates:
    direct = estimate_direct(rct)
    nuisances = fit_nuisances(rct, family, trim=trim, known_ps=known_ps, regressor=regressor)
    aipw = estimate_aipw(rct, nuisances, estimator="aipw", k=0)
    logger.info(f"RCT-only: direct={direct.estimate:.4f} (se {direct.se:.4f}), aipw={aipw.estimate:.4f} (se {aipw.se:.4f})")
    return RctEstimates(direct=direct, aipw=aipw)


def estimate_subset(
    rct: RctDataset,
    ec_subset: Optional[EcDataset],
    family,
    reference: Optional[float] = None,
    trim: float = 0.01,
    regressor: str = "glm",
    estimator: str = "subset",
) -> EstimateReport:
    """AIPW on the RCT pooled with `ec_subset`, nuisances refitted on the pooled sample."""
    data = combine(rct, ec_subset)
    nuisances = fit_nuisances(data, family, trim=trim, regressor=regressor)
    return estimate_aipw(data, nuisances, reference=reference, estimator=estimator, k=data.n_ec)


def estimate_full(
    rct: RctDataset,
    ec: EcDataset,
    family,
    reference: Optional[float] = None,
    trim: float = 0.01,
    regressor: str = "glm",
) -> EstimateReport:
    return estimate_subset(rct, ec, family, reference=reference, trim=trim, regressor=regressor, estimator="full")


def outcome_family(dataset) -> Family:
    """Gaussian unless the outcome is binary."""
    return Family.BINOMIAL if dataset.outcome_kind.value == "binary" else Family.GAUSSIAN


TABLE_COLUMNS = ["estimator", "estimate", "bias", "sd", "mse", "k_star"]


def comparison_table(reports: Sequence[EstimateReport], reference: Optional[float] = None) -> pd.DataFrame:
    """
    One row per estimator: estimate, bias, SD (= se), MSE, k*.

    Reports that already carry a bias keep it; otherwise bias and MSE are
    taken against `reference` when one is given and left empty if not.
    """
    rows = []
    for report in reports:
        if report.bias is None and reference is not None:
            report = report.against(reference)
        rows.append({
            "estimator": report.estimator,
            "estimate": report.estimate,
            "bias": report.bias,
            "sd": report.se,
            "mse": report.mse,
            "k_star": report.k,
        })
    return pd.DataFrame(rows, columns=TABLE_COLUMNS)


__all__ = [
    "NuisanceEstimates", "EstimateReport", "RctEstimates", "estimate_direct", "fit_nuisances",
    "aipw_scores", "estimate_aipw", "estimate_rct", "estimate_subset", "estimate_full", "outcome_family",
    "comparison_table",
]
