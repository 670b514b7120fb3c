"""
Outcome calibration of external controls via an R-learner.

Among the pooled controls (RCT controls R=1, ECs R=0) write
    Y = mu(X) + (1 - R) b(X) + noise
with b the systematic EC-minus-RCT discrepancy. With m(x) = E[Y | X=x]
and pi0(x) = P(R=1 | X=x) over the pooled controls,
    Y - m(X) = (pi0(X) - R) b(X) + noise,
so b is recovered by regressing the residual on the transformed
regressor (pi0 - R) b(X). Calibrated EC outcomes are Y - b(X).

Nuisances are fitted once on all pooled controls, without cross-fitting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg

from ecborrow.config import NUMERICS, NumericsConfig
from ecborrow.data.datasets import EcDataset, OutcomeKind, RctDataset, controls_only
from ecborrow.errors import CalibrationError, ShapeMismatchError
from ecborrow.models.glm import (
    Family, GlmFit, SingularDesignError, add_intercept, fit_glm, predict_mean,
)
from ecborrow.models.kernel_ridge import KernelRidgeFit, fit_kernel_ridge, predict_kernel_ridge

logger = logging.getLogger(__name__)

BIAS_KINDS = ("linear", "kernel")


class SourceMissingError(CalibrationError):
    """The pooled controls hold only one source (all RCT or all EC)."""
    pass


@dataclass(frozen=True)
class SamplingScoreModel:
    """Logistic model of P(R=1 | X) among pooled controls."""
    fit: GlmFit
    clamp: float = NUMERICS.sampling_clamp

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.clip(predict_mean(self.fit, X), self.clamp, 1.0 - self.clamp)


def pooled_controls(rct: RctDataset, ec: EcDataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(X, R, Y) for RCT controls followed by ECs."""
    ctrl = controls_only(rct)
    if ctrl.p != ec.p:
        raise ShapeMismatchError(f"EC has {ec.p} covariates, RCT has {ctrl.p}")
    X = np.vstack([ctrl.X, ec.X])
    R = np.concatenate([np.ones(ctrl.n), np.zeros(ec.n)])
    Y = np.concatenate([ctrl.Y, ec.Y])
    return X, R, Y


def fit_sampling_score(X_controls: np.ndarray, R: np.ndarray,
                       numerics: NumericsConfig = NUMERICS) -> SamplingScoreModel:
    R = np.asarray(R, dtype=float).ravel()
    if not np.any(R == 1) or not np.any(R == 0):
        raise SourceMissingError("pooled controls need both RCT (R=1) and EC (R=0) rows")
    fit = fit_glm(X_controls, R, Family.BINOMIAL, numerics)
    return SamplingScoreModel(fit=fit, clamp=numerics.sampling_clamp)


@dataclass(frozen=True, eq=False)
class BiasModel:
    """
    Fitted bias function b(x).

    `coefficients` is set for the linear kind (intercept first),
    `kernel_fit` for the kernel kind. The nuisance models are kept for
    reporting; a zero model has none.
    """
    kind: str
    coefficients: Optional[np.ndarray] = None
    kernel_fit: Optional[KernelRidgeFit] = None
    outcome_model: Optional[Union[GlmFit, KernelRidgeFit]] = None
    sampling_model: Optional[SamplingScoreModel] = None

    @classmethod
    def zero(cls, p: int) -> "BiasModel":
        return cls(kind="linear", coefficients=np.zeros(p + 1))

    @property
    def n_features(self) -> int:
        if self.kernel_fit is not None:
            return self.kernel_fit.n_features
        return int(self.coefficients.shape[0] - 1)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.shape[1] != self.n_features:
            raise ShapeMismatchError(f"bias model expects {self.n_features} covariates, got {X.shape[1]}")
        if self.kind == "kernel":
            return predict_kernel_ridge(self.kernel_fit, X)
        return add_intercept(X) @ self.coefficients

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.coefficients is not None:
            out["coefficients"] = [float(c) for c in self.coefficients]
        if self.kernel_fit is not None:
            out["kernel"] = self.kernel_fit.to_dict()
        if isinstance(self.outcome_model, GlmFit):
            out["outcome_model"] = self.outcome_model.to_dict()
        elif isinstance(self.outcome_model, KernelRidgeFit):
            out["outcome_model"] = self.outcome_model.to_dict()
        if self.sampling_model is not None:
            out["sampling_model"] = self.sampling_model.fit.to_dict()
        return out


def _fit_outcome(X: np.ndarray, Y: np.ndarray, kind: str, family: Family):
    if kind == "kernel":
        fit = fit_kernel_ridge(X, Y)
        return fit, predict_kernel_ridge(fit, X)
    fit = fit_glm(X, Y, family)
    return fit, predict_mean(fit, X)


def fit_rlearner(
    X_controls: np.ndarray,
    R: np.ndarray,
    Y: np.ndarray,
    kind: str = "linear",
    family=Family.GAUSSIAN,
    sampling_model: Optional[SamplingScoreModel] = None,
    numerics: NumericsConfig = NUMERICS,
) -> BiasModel:
    """
    Fit b(x) on pooled controls.

    linear: least squares of (Y - m(X)) on (pi0 - R) * [1, X].
    kernel: weighted kernel ridge of (Y - m(X)) / (pi0 - R) with
            weights (pi0 - R)^2, which is the same squared loss.
    """
    if kind not in BIAS_KINDS:
        raise CalibrationError(f"unknown bias model kind {kind!r}; expected one of {BIAS_KINDS}")
    X = np.asarray(X_controls, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    R = np.asarray(R, dtype=float).ravel()
    Y = np.asarray(Y, dtype=float).ravel()
    if not (X.shape[0] == R.shape[0] == Y.shape[0]):
        raise ShapeMismatchError("X, R and Y must have the same number of rows")

    if sampling_model is None:
        sampling_model = fit_sampling_score(X, R, numerics)
    pi0 = sampling_model.predict(X)
    outcome_model, m_hat = _fit_outcome(X, Y, kind, Family.coerce(family))
    resid = Y - m_hat
    d = pi0 - R

    if np.max(np.abs(d)) < numerics.calibration_guard:
        raise SingularDesignError(
            f"transformed regressor pi0 - R is numerically zero (max |.| < {numerics.calibration_guard})"
        )

    if kind == "linear":
        Z = d[:, None] * add_intercept(X)
        rank = np.linalg.matrix_rank(Z)
        if rank < Z.shape[1]:
            raise SingularDesignError(f"transformed design has rank {rank} < {Z.shape[1]}")
        beta, _, _, _ = scipy.linalg.lstsq(Z, resid)
        logger.info(f"Linear bias model: coefficients {np.round(beta, 4).tolist()}")
        return BiasModel(kind="linear", coefficients=beta, outcome_model=outcome_model,
                         sampling_model=sampling_model)

    weights = d ** 2
    safe = np.where(d != 0, d, 1.0)
    pseudo = np.where(d != 0, resid / safe, 0.0)
    kernel_fit = fit_kernel_ridge(X, pseudo, weights=weights, numerics=numerics)
    logger.info(f"Kernel bias model: lambda={kernel_fit.lam:.3g}, offset={kernel_fit.offset:.4f}")
    return BiasModel(kind="kernel", kernel_fit=kernel_fit, outcome_model=outcome_model,
                     sampling_model=sampling_model)


def fit_bias_model(rct: RctDataset, ec: EcDataset, kind: str = "linear",
                   numerics: NumericsConfig = NUMERICS) -> BiasModel:
    """R-learner on the RCT controls pooled with every EC."""
    X, R, Y = pooled_controls(rct, ec)
    family = Family.BINOMIAL if rct.outcome_kind is OutcomeKind.BINARY else Family.GAUSSIAN
    return fit_rlearner(X, R, Y, kind=kind, family=family, numerics=numerics)


def calibrate_ec(ec: EcDataset, bias_model: BiasModel) -> EcDataset:
    """Y - b(X) on every EC; the calibrated outcome is always continuous."""
    if ec.p != bias_model.n_features:
        raise ShapeMismatchError(f"EC has {ec.p} covariates, bias model expects {bias_model.n_features}")
    if ec.n == 0:
        return ec.with_outcome(ec.Y, OutcomeKind.CONTINUOUS)
    return ec.with_outcome(ec.Y - bias_model.predict(ec.X), OutcomeKind.CONTINUOUS)
