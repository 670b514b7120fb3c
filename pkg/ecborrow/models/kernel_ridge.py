"""
Kernel-based regularized least squares with a Gaussian kernel.

Defaults mirror the KRLS conventions: covariates standardized column by
column, bandwidth sigma^2 = p, outcome centred. The ridge penalty is
picked by leave-one-out error over lambda in 10^{-6..2} * n (17 points),
using the closed-form LOO residual r_i / (1 - H_ii) from a single
eigendecomposition of the kernel matrix.

Optional unit weights turn this into weighted kernel ridge,
min sum w_i (t_i - f(x_i))^2 + lambda ||f||^2, solved in the symmetric
form W^{1/2} K W^{1/2} so that near-zero weights stay harmless.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from ecborrow.config import NUMERICS, NumericsConfig
from ecborrow.errors import ModelError, ShapeMismatchError

logger = logging.getLogger(__name__)


class DegenerateKernelError(ModelError):
    """All training inputs coincide; the kernel matrix is constant."""
    pass


@dataclass(frozen=True, eq=False)
class KernelRidgeFit:
    X_train: np.ndarray       # standardized training inputs
    x_center: np.ndarray
    x_scale: np.ndarray
    dual_weights: np.ndarray
    sigma2: float
    lam: float
    offset: float
    loo_error: float

    @property
    def n_features(self) -> int:
        return int(self.X_train.shape[1])

    def to_dict(self) -> dict:
        return {
            "kind": "kernel-ridge",
            "sigma2": self.sigma2,
            "lambda": self.lam,
            "offset": self.offset,
            "n_train": int(self.X_train.shape[0]),
            "loo_error": self.loo_error,
        }


def gaussian_kernel(U: np.ndarray, V: np.ndarray, sigma2: float) -> np.ndarray:
    return np.exp(-cdist(U, V, "sqeuclidean") / sigma2)


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    center = X.mean(axis=0)
    scale = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.ones(X.shape[1])
    scale = np.where(scale > 0, scale, 1.0)
    return (X - center) / scale, center, scale


def lambda_grid(n: int, numerics: NumericsConfig = NUMERICS) -> np.ndarray:
    return np.logspace(numerics.krls_log10_min, numerics.krls_log10_max, numerics.krls_grid_size) * n


def fit_kernel_ridge(
    X: np.ndarray,
    y: np.ndarray,
    weights: Optional[np.ndarray] = None,
    sigma2: Optional[float] = None,
    lambdas: Optional[np.ndarray] = None,
    numerics: NumericsConfig = NUMERICS,
) -> KernelRidgeFit:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if y.shape[0] != n:
        raise ShapeMismatchError(f"{n} rows but {y.shape[0]} outcomes")
    if n < 2:
        raise ModelError("kernel ridge needs at least 2 rows")
    if p == 0 or np.all(np.ptp(X, axis=0) == 0):
        raise DegenerateKernelError("all training inputs are identical")

    Z, center, scale = _standardize(X)
    sigma2 = float(sigma2 if sigma2 is not None else p)
    K = gaussian_kernel(Z, Z, sigma2)

    if weights is None:
        sw = np.ones(n)
        offset = float(y.mean())
        u = y - offset
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape[0] != n or np.any(w < 0):
            raise ShapeMismatchError("weights must be nonnegative with one entry per row")
        sw = np.sqrt(w)
        # offset = weighted mean of the target
        offset = float(np.sum(w * y) / np.sum(w)) if np.sum(w) > 0 else 0.0
        u = sw * (y - offset)

    Kt = sw[:, None] * K * sw[None, :]
    evals, Q = scipy.linalg.eigh(Kt)
    evals = np.clip(evals, 0.0, None)
    Qu = Q.T @ u

    grid = lambda_grid(n, numerics) if lambdas is None else np.asarray(lambdas, dtype=float)
    best = (np.inf, grid[0])
    for lam in grid:
        shrink = evals / (evals + lam)
        fitted = Q @ (shrink * Qu)
        h_diag = np.einsum("ij,j,ij->i", Q, shrink, Q)
        resid = (u - fitted) / np.clip(1.0 - h_diag, 1e-12, None)
        err = float(np.sum(resid ** 2))
        if err < best[0]:
            best = (err, lam)
    loo_error, lam = best

    alpha = sw * (Q @ (Qu / (evals + lam)))
    logger.debug(f"KRLS: n={n}, sigma2={sigma2}, lambda={lam:.3g}, loo={loo_error:.4g}")
    return KernelRidgeFit(
        X_train=Z, x_center=center, x_scale=scale, dual_weights=alpha,
        sigma2=sigma2, lam=float(lam), offset=offset, loo_error=loo_error,
    )


def predict_kernel_ridge(fit: KernelRidgeFit, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[1] != fit.n_features:
        raise ShapeMismatchError(f"model expects {fit.n_features} covariates, got {X.shape[1]}")
    Z = (X - fit.x_center) / fit.x_scale
    return fit.offset + gaussian_kernel(Z, fit.X_train, fit.sigma2) @ fit.dual_weights
