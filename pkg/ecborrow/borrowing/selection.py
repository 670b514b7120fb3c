"""
Nested borrowing subsets and MSE-driven choice of the subset size.

ECs are ranked by ascending influence score; S_k holds the first k. For
each k on the grid the RCT is pooled with S_k, nuisances are refitted,
and the AIPW estimate is scored by bias^2 + variance against a reference
value. k* is the grid point with the smallest MSE, the smaller k on ties.

Each k is evaluated independently, so a grid can be computed in any
order (or in parallel) and any single row recomputed on its own.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from ecborrow.borrowing.estimators import EstimateReport, estimate_subset
from ecborrow.borrowing.influence import InfluenceScores
from ecborrow.data.datasets import EcDataset, RctDataset
from ecborrow.errors import EcBorrowError, SelectionError

logger = logging.getLogger(__name__)

Z_95 = 1.96


class KOutOfRangeError(SelectionError):
    """Requested subset size outside [0, n_ec]."""
    pass


class SelectionFailedError(SelectionError):
    """Every grid point failed to produce an estimate."""
    pass


def nested_subset(ec: EcDataset, influences: InfluenceScores, k: int) -> EcDataset:
    """The k ECs with the smallest influence scores, in rank order."""
    if len(influences) != ec.n:
        raise SelectionError(f"{len(influences)} influence scores for {ec.n} ECs")
    if not (0 <= k <= ec.n):
        raise KOutOfRangeError(f"k={k} outside [0, {ec.n}]")
    return ec.take(influences.top(k))


@dataclass(frozen=True)
class KGridRow:
    top_k: int
    estimate: float = float("nan")
    bias: float = float("nan")
    variance: float = float("nan")
    mse: float = float("nan")
    status: str = "ok"
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def ci_lower(self) -> float:
        return self.estimate - Z_95 * np.sqrt(self.variance)

    @property
    def ci_upper(self) -> float:
        return self.estimate + Z_95 * np.sqrt(self.variance)

    @classmethod
    def from_report(cls, k: int, report: EstimateReport) -> "KGridRow":
        return cls(top_k=k, estimate=report.estimate, bias=report.bias,
                   variance=report.variance, mse=report.mse)

    @classmethod
    def failed(cls, k: int, exc: Exception) -> "KGridRow":
        return cls(top_k=k, status="error", error=f"{type(exc).__name__}: {exc}")


@dataclass(frozen=True)
class KGrid:
    rows: tuple[KGridRow, ...]

    def __post_init__(self):
        ks = [r.top_k for r in self.rows]
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise SelectionError("grid k values must be strictly increasing")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def ks(self) -> list[int]:
        return [r.top_k for r in self.rows]

    @property
    def failures(self) -> list[KGridRow]:
        return [r for r in self.rows if not r.ok]

    def row(self, k: int) -> KGridRow:
        for r in self.rows:
            if r.top_k == k:
                return r
        raise KeyError(k)

    def argmin(self) -> KGridRow:
        """Smallest-MSE successful row; strict < keeps the smaller k on ties."""
        best: Optional[KGridRow] = None
        for r in self.rows:
            if r.ok and (best is None or r.mse < best.mse):
                best = r
        if best is None:
            raise SelectionFailedError(f"all {len(self.rows)} grid points failed")
        return best

    def to_frame(self, with_ci: bool = False) -> pd.DataFrame:
        columns = ["top_k", "estimate", "bias", "variance", "mse"]
        if with_ci:
            columns += ["ci_lower", "ci_upper"]
        records = []
        for r in self.rows:
            if not r.ok:
                continue
            rec = {"top_k": r.top_k, "estimate": r.estimate, "bias": r.bias, "variance": r.variance, "mse": r.mse}
            if with_ci:
                rec["ci_lower"], rec["ci_upper"] = r.ci_lower, r.ci_upper
            records.append(rec)
        return pd.DataFrame(records, columns=columns)


@dataclass(frozen=True)
class OptimalSelection:
    k_star: int
    report: EstimateReport
    grid: KGrid
    selected_ec_indices: np.ndarray

    def to_dict(self) -> dict:
        return {
            "k_star": self.k_star,
            "selected_ec_indices": [int(i) for i in self.selected_ec_indices],
            "report": self.report.to_dict(),
            "failed_k": [r.top_k for r in self.grid.failures],
        }


def evaluate_subset(
    rct: RctDataset,
    ec: EcDataset,
    influences: InfluenceScores,
    k: int,
    reference: float,
    family,
    trim: float = 0.01,
    regressor: str = "glm",
) -> EstimateReport:
    """AIPW with the top-k ECs borrowed, scored against `reference`."""
    subset = nested_subset(ec, influences, k)
    return estimate_subset(rct, subset, family, reference=reference, trim=trim,
                           regressor=regressor, estimator="aib")


def _evaluate_grid(
    rct: RctDataset,
    ec: EcDataset,
    influences: InfluenceScores,
    ks: Sequence[int],
    reference: float,
    family,
    trim: float,
    regressor: str,
    max_workers: int,
) -> tuple[KGrid, dict[int, EstimateReport]]:
    for k in ks:
        if not (0 <= k <= ec.n):
            raise KOutOfRangeError(f"k={k} outside [0, {ec.n}]")

    def run(k: int):
        try:
            return k, evaluate_subset(rct, ec, influences, k, reference, family, trim, regressor), None
        except EcBorrowError as exc:
            return k, None, exc

    if max_workers > 1 and len(ks) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run, ks))
    else:
        results = [run(k) for k in ks]

    rows, reports = [], {}
    for k, report, exc in results:
        if exc is not None:
            logger.warning(f"k={k} failed: {type(exc).__name__}: {exc}")
            rows.append(KGridRow.failed(k, exc))
        else:
            rows.append(KGridRow.from_report(k, report))
            reports[k] = report
    return KGrid(rows=tuple(rows)), reports


def find_optimal_k(
    rct: RctDataset,
    ec: EcDataset,
    influences: InfluenceScores,
    reference_value: float,
    k_vector: Sequence[int],
    family,
    trim: float = 0.01,
    regressor: str = "glm",
    max_workers: int = 1,
) -> OptimalSelection:
    if not np.isfinite(reference_value):
        raise SelectionError("reference value must be finite")
    ks = [int(k) for k in k_vector]
    if not ks:
        raise SelectionError("k_vector is empty")
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise SelectionError("k_vector must be sorted and unique")

    grid, reports = _evaluate_grid(rct, ec, influences, ks, reference_value, family, trim, regressor, max_workers)
    best = grid.argmin()
    logger.info(f"Optimal k* = {best.top_k} (mse {best.mse:.5g}, {len(grid.failures)} failed grid points)")
    return OptimalSelection(
        k_star=best.top_k,
        report=reports[best.top_k],
        grid=grid,
        selected_ec_indices=np.array(influences.top(best.top_k)),
    )


def sensitivity_sweep(
    rct: RctDataset,
    ec: EcDataset,
    influences: InfluenceScores,
    reference: float,
    k_star: int,
    delta: int,
    family,
    trim: float = 0.01,
    regressor: str = "glm",
    max_workers: int = 1,
) -> KGrid:
    """Every k in [k* - delta, k* + delta] clipped to [0, n_ec]."""
    if delta < 1:
        raise SelectionError("delta must be at least 1")
    lo, hi = max(0, k_star - delta), min(ec.n, k_star + delta)
    grid, _ = _evaluate_grid(rct, ec, influences, list(range(lo, hi + 1)), reference, family, trim,
                             regressor, max_workers)
    return grid
