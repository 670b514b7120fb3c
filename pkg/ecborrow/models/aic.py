"""
Forward-stepwise covariate selection by AIC.

AIC = -2 log L + 2 * (#parameters). For the binomial family -2 log L is
the deviance; for the Gaussian family it is n log(RSS/n) up to a
constant, with the residual variance counted as a parameter.
"""

from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

from ecborrow.errors import ModelError
from ecborrow.models.glm import Family, fit_glm, log_likelihood

logger = logging.getLogger(__name__)


def aic_score(X: np.ndarray, y: np.ndarray, family, columns: Sequence[int]) -> float:
    family = Family.coerce(family)
    Xs = np.asarray(X, dtype=float)[:, list(columns)]
    fit = fit_glm(Xs, y, family)
    n_params = len(columns) + 1 + (1 if family is Family.GAUSSIAN else 0)
    return -2.0 * log_likelihood(fit, Xs, y) + 2.0 * n_params


def select_covariates_aic(X: np.ndarray, y: np.ndarray, family,
                          names: Optional[Sequence[str]] = None) -> list[int]:
    """
    Greedy forward selection starting from the intercept-only model.

    Returns column indices in the order they were added. Candidates whose
    fit fails (singular, separated) are skipped. Ties go to the lower
    column index.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    selected: list[int] = []
    current = aic_score(X, y, family, selected)
    remaining = list(range(X.shape[1]))

    while remaining:
        best_col, best_aic = None, current
        for j in remaining:
            try:
                score = aic_score(X, y, family, selected + [j])
            except ModelError:
                continue
            if score < best_aic:
                best_col, best_aic = j, score
        if best_col is None:
            break
        selected.append(best_col)
        remaining.remove(best_col)
        label = names[best_col] if names is not None else best_col
        logger.debug(f"AIC step: added {label} (AIC {current:.3f} -> {best_aic:.3f})")
        current = best_aic
    return selected
