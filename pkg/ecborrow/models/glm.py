"""
Generalized linear models: Gaussian-identity and Binomial-logit.

The per-unit loss is the negative log-likelihood (Gaussian scaled to
half the squared error), so the influence module can take gradients and
Hessians straight from here. An intercept is always prepended.

IRLS follows the usual recipe: working response z = eta + (y - mu)/w,
weights w = mu(1 - mu), convergence on the relative deviance change,
step-halving whenever the deviance goes up.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.special import expit, xlogy

from ecborrow.config import NUMERICS, NumericsConfig
from ecborrow.errors import ModelError, ShapeMismatchError

logger = logging.getLogger(__name__)


class Family(str, Enum):
    GAUSSIAN = "gaussian"
    BINOMIAL = "binomial"

    @classmethod
    def coerce(cls, value) -> "Family":
        return value if isinstance(value, cls) else cls(str(value))


class SingularDesignError(ModelError):
    """The (weighted) design cross-product is rank deficient."""
    pass


class NonconvergenceError(ModelError):
    """IRLS hit its iteration cap."""
    pass


class PerfectSeparationError(ModelError):
    """Logistic coefficients diverge: the classes are separable."""
    pass


class InsufficientRowsError(ModelError):
    """Fewer rows than p + 2."""
    pass


@dataclass(frozen=True, eq=False)
class GlmFit:
    """Fitted GLM; coefficients are intercept-first."""
    coefficients: np.ndarray
    family: Family
    converged: bool
    iterations: int
    deviance: float
    condition_estimate: float

    @property
    def n_features(self) -> int:
        return int(self.coefficients.shape[0] - 1)

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "coefficients": [float(c) for c in self.coefficients],
            "converged": self.converged,
            "iterations": self.iterations,
            "deviance": float(self.deviance),
            "condition_estimate": float(self.condition_estimate),
        }


def add_intercept(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return np.column_stack([np.ones(X.shape[0]), X])


def _design(fit: GlmFit, X: np.ndarray) -> np.ndarray:
    Xd = add_intercept(X)
    if Xd.shape[1] != fit.coefficients.shape[0]:
        raise ShapeMismatchError(f"model expects {fit.n_features} covariates, got {Xd.shape[1] - 1}")
    return Xd


def deviance(family: Family, y: np.ndarray, mu: np.ndarray) -> float:
    if family is Family.GAUSSIAN:
        return float(np.sum((y - mu) ** 2))
    mu = np.clip(mu, 1e-300, 1 - 1e-16)
    return float(2.0 * np.sum(xlogy(y, y / mu) + xlogy(1 - y, (1 - y) / (1 - mu))))


def log_likelihood(fit: GlmFit, X: np.ndarray, y: np.ndarray) -> float:
    """Maximized log-likelihood (Gaussian uses the ML variance RSS/n)."""
    y = np.asarray(y, dtype=float)
    mu = predict_mean(fit, X)
    n = y.shape[0]
    if fit.family is Family.GAUSSIAN:
        rss = max(float(np.sum((y - mu) ** 2)), 1e-300)
        return -0.5 * n * (np.log(2 * np.pi * rss / n) + 1.0)
    return -0.5 * deviance(fit.family, y, mu)


def _check_rank(Xd: np.ndarray) -> None:
    rank = np.linalg.matrix_rank(Xd)
    if rank < Xd.shape[1]:
        raise SingularDesignError(f"design has rank {rank} < {Xd.shape[1]} columns")


def fit_glm(X: np.ndarray, y: np.ndarray, family, numerics: NumericsConfig = NUMERICS) -> GlmFit:
    """Fit a GLM with intercept by least squares (Gaussian) or IRLS (Binomial)."""
    family = Family.coerce(family)
    Xd = add_intercept(X)
    y = np.asarray(y, dtype=float).ravel()
    n, q = Xd.shape
    if y.shape[0] != n:
        raise ShapeMismatchError(f"{n} rows but {y.shape[0]} outcomes")
    if n < q + 1:
        raise InsufficientRowsError(f"need at least {q + 1} rows for {q - 1} covariates, got {n}")
    _check_rank(Xd)

    if family is Family.GAUSSIAN:
        beta, _, _, _ = scipy.linalg.lstsq(Xd, y)
        return GlmFit(
            coefficients=beta,
            family=family,
            converged=True,
            iterations=1,
            deviance=deviance(family, y, Xd @ beta),
            condition_estimate=float(np.linalg.cond(Xd.T @ Xd)),
        )

    if not np.isin(y, (0.0, 1.0)).all():
        raise ModelError("binomial family requires outcomes in {0, 1}")
    return _irls_logit(Xd, y, numerics)


def _irls_logit(Xd: np.ndarray, y: np.ndarray, numerics: NumericsConfig) -> GlmFit:
    beta = np.zeros(Xd.shape[1])
    dev = deviance(Family.BINOMIAL, y, expit(Xd @ beta))
    XtWX = Xd.T @ Xd

    for it in range(1, numerics.irls_max_iter + 1):
        eta = Xd @ beta
        mu = expit(eta)
        w = np.clip(mu * (1 - mu), 1e-12, None)
        z = eta + (y - mu) / w
        XtWX = Xd.T @ (w[:, None] * Xd)
        try:
            cho = scipy.linalg.cho_factor(XtWX)
        except np.linalg.LinAlgError as exc:
            raise SingularDesignError("weighted design X'WX is not positive definite") from exc
        beta_new = scipy.linalg.cho_solve(cho, Xd.T @ (w * z))
        dev_new = deviance(Family.BINOMIAL, y, expit(Xd @ beta_new))

        halvings = 0
        while dev_new > dev and halvings < numerics.max_step_halvings:
            beta_new = 0.5 * (beta + beta_new)
            dev_new = deviance(Family.BINOMIAL, y, expit(Xd @ beta_new))
            halvings += 1
        if halvings:
            logger.debug(f"IRLS iteration {it}: {halvings} step-halving(s)")

        change = abs(dev_new - dev) / (abs(dev_new) + 0.1)
        beta, dev = beta_new, dev_new
        if change < numerics.irls_tol:
            # separation is judged on the converged coefficients only
            _check_separation(beta, numerics)
            mu = expit(Xd @ beta)
            w = mu * (1 - mu)
            XtWX = Xd.T @ (w[:, None] * Xd)
            return GlmFit(
                coefficients=beta,
                family=Family.BINOMIAL,
                converged=True,
                iterations=it,
                deviance=dev,
                condition_estimate=float(np.linalg.cond(XtWX)),
            )

    _check_separation(beta, numerics)
    raise NonconvergenceError(f"IRLS did not converge in {numerics.irls_max_iter} iterations")


def _check_separation(beta: np.ndarray, numerics: NumericsConfig) -> None:
    norm = float(np.max(np.abs(beta)))
    if norm > numerics.separation_threshold:
        raise PerfectSeparationError(
            f"coefficient norm {norm:.1f} exceeds {numerics.separation_threshold} (perfect separation)"
        )


def linear_predictor(fit: GlmFit, X: np.ndarray) -> np.ndarray:
    return _design(fit, X) @ fit.coefficients


def predict_mean(fit: GlmFit, X: np.ndarray) -> np.ndarray:
    eta = linear_predictor(fit, X)
    if fit.family is Family.GAUSSIAN:
        return eta
    return expit(eta)


# -- Per-unit loss, gradient, Hessian --

def unit_losses(fit: GlmFit, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    eta = linear_predictor(fit, X)
    y = np.asarray(y, dtype=float).ravel()
    if fit.family is Family.GAUSSIAN:
        return 0.5 * (y - eta) ** 2
    return np.logaddexp(0.0, eta) - y * eta


def unit_gradients(fit: GlmFit, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row i is the gradient of unit i's loss with respect to the coefficients."""
    Xd = _design(fit, X)
    eta = Xd @ fit.coefficients
    y = np.asarray(y, dtype=float).ravel()
    mu = eta if fit.family is Family.GAUSSIAN else expit(eta)
    return (mu - y)[:, None] * Xd


def unit_loss(fit: GlmFit, x: np.ndarray, y: float) -> float:
    return float(unit_losses(fit, np.atleast_2d(x), np.atleast_1d(y))[0])


def unit_gradient(fit: GlmFit, x: np.ndarray, y: float) -> np.ndarray:
    return unit_gradients(fit, np.atleast_2d(x), np.atleast_1d(y))[0]


def avg_hessian(fit: GlmFit, X: np.ndarray, y: Optional[np.ndarray] = None) -> np.ndarray:
    """Mean per-unit Hessian over the rows of X (the outcome does not enter)."""
    Xd = _design(fit, X)
    if fit.family is Family.GAUSSIAN:
        w = np.ones(Xd.shape[0])
    else:
        mu = expit(Xd @ fit.coefficients)
        w = mu * (1 - mu)
    H = Xd.T @ (w[:, None] * Xd) / Xd.shape[0]
    return 0.5 * (H + H.T)
