"""
Influence scores for external controls.

For an EC unit z, the score approximates how much adding z to the RCT
controls would move the controls' total loss:

    IF(z) = sum_{i in controls} | grad L(Z_i)^T  H^{-1}  grad L(z) |

with H the average per-unit Hessian over the controls. The control
gradients G and one Cholesky factorization of H are computed once; each
EC then costs one triangular solve. Scores are not normalized by the
control count; the ranking is the same either way.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.linalg

from ecborrow.config import NUMERICS, NumericsConfig
from ecborrow.errors import ModelError, ShapeMismatchError
from ecborrow.models.glm import GlmFit, avg_hessian, fit_glm, unit_gradients, unit_losses

logger = logging.getLogger(__name__)


class SingularHessianError(ModelError):
    """The control-arm Hessian cannot be made positive definite."""
    pass


@dataclass(frozen=True, eq=False)
class InfluenceScores:
    """Per-EC scores plus the stable ascending ranking."""
    scores: np.ndarray
    ranking: np.ndarray

    @classmethod
    def from_scores(cls, scores: np.ndarray) -> "InfluenceScores":
        scores = np.array(scores, dtype=float)
        ranking = np.argsort(scores, kind="stable")
        scores.setflags(write=False)
        ranking.setflags(write=False)
        return cls(scores=scores, ranking=ranking)

    def __len__(self) -> int:
        return int(self.scores.shape[0])

    def top(self, k: int) -> np.ndarray:
        return self.ranking[:k]

    def to_frame(self) -> pd.DataFrame:
        """Columns ec_index, score, rank (rank 1 = most comparable)."""
        ranks = np.empty(len(self), dtype=int)
        ranks[self.ranking] = np.arange(1, len(self) + 1)
        return pd.DataFrame({"ec_index": np.arange(len(self)), "score": self.scores, "rank": ranks})


def factor_hessian(H: np.ndarray, numerics: NumericsConfig = NUMERICS):
    """Cholesky factor of H, with ridge jitter when it is near singular."""
    q = H.shape[0]
    scale = float(np.trace(H)) / q
    if not np.isfinite(scale) or scale <= 0:
        raise SingularHessianError("Hessian has non-positive trace")
    min_eig = float(np.linalg.eigvalsh(H)[0])
    if min_eig < numerics.hessian_floor * scale:
        jitter = numerics.hessian_jitter * scale
        logger.warning(f"Hessian near singular (min eigenvalue {min_eig:.3g}); adding jitter {jitter:.3g}")
        H = H + jitter * np.eye(q)
        if float(np.linalg.eigvalsh(H)[0]) <= 0:
            raise SingularHessianError("Hessian is singular even after jitter")
    try:
        return scipy.linalg.cho_factor(H)
    except np.linalg.LinAlgError as exc:
        raise SingularHessianError("Cholesky factorization of the Hessian failed") from exc


def compute_influences(
    fit: GlmFit,
    X_controls: np.ndarray,
    y_controls: np.ndarray,
    X_ec: np.ndarray,
    y_ec: np.ndarray,
    numerics: NumericsConfig = NUMERICS,
) -> InfluenceScores:
    """Score every EC against the control-arm model `fit`."""
    X_ec = np.asarray(X_ec, dtype=float)
    if X_ec.ndim == 1:
        X_ec = X_ec.reshape(-1, 1)
    if X_ec.shape[1] != fit.n_features:
        raise ShapeMismatchError(f"EC has {X_ec.shape[1]} covariates, model has {fit.n_features}")

    G = unit_gradients(fit, X_controls, y_controls)
    cho = factor_hessian(avg_hessian(fit, X_controls), numerics)
    if X_ec.shape[0] == 0:
        return InfluenceScores.from_scores(np.zeros(0))

    Gz = unit_gradients(fit, X_ec, y_ec)
    V = scipy.linalg.cho_solve(cho, Gz.T)
    scores = np.abs(G @ V).sum(axis=0)
    logger.info(f"Influence scores for {X_ec.shape[0]} ECs: median {np.median(scores):.4g}, max {scores.max():.4g}")
    return InfluenceScores.from_scores(scores)


def exact_influence(
    fit: GlmFit,
    X_controls: np.ndarray,
    y_controls: np.ndarray,
    x: np.ndarray,
    y: float,
) -> float:
    """Refit with z = (x, y) added and sum the absolute loss changes over the controls."""
    X_controls = np.asarray(X_controls, dtype=float)
    if X_controls.ndim == 1:
        X_controls = X_controls.reshape(-1, 1)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    refit = fit_glm(np.vstack([X_controls, x]), np.append(np.asarray(y_controls, dtype=float), y), fit.family)
    before = unit_losses(fit, X_controls, y_controls)
    after = unit_losses(refit, X_controls, y_controls)
    return float(np.sum(np.abs(after - before)))
