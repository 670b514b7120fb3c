"""
End-to-end borrowing analysis.

Runs the stages in order:
    AIC            optional covariate restriction (union of per-arm selections)
    OUTCOME_MODEL  RCT-only estimators, reference value, control-arm GLM
    INFLUENCE      influence score per EC
    SELECTION      MSE grid over nested subsets, k*, full borrowing
    CALIBRATION    bias model, calibrated ECs, calibrated selection (optional)
    SENSITIVITY    grid around k* (optional)
    COMPARISON     estimator table

A domain error inside a stage stops the run and is re-raised as
PipelineStageError naming that stage.
"""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum, auto
from typing import Optional

import pandas as pd

from ecborrow.borrowing.calibration import BiasModel, calibrate_ec, fit_bias_model
from ecborrow.borrowing.estimators import (
    EstimateReport, RctEstimates, comparison_table, estimate_full, estimate_rct, outcome_family,
)
from ecborrow.borrowing.influence import InfluenceScores, compute_influences
from ecborrow.borrowing.selection import KGrid, OptimalSelection, find_optimal_k, sensitivity_sweep
from ecborrow.config import AnalysisConfig
from ecborrow.core.logger import RunLogger
from ecborrow.data.datasets import EcDataset, RctDataset, controls_only
from ecborrow.errors import EcBorrowError, PipelineStageError
from ecborrow.models.aic import select_covariates_aic
from ecborrow.models.glm import Family, GlmFit, fit_glm

logger = logging.getLogger(__name__)


class AnalysisStage(Enum):
    AIC = auto()
    OUTCOME_MODEL = auto()
    INFLUENCE = auto()
    SELECTION = auto()
    CALIBRATION = auto()
    SENSITIVITY = auto()
    COMPARISON = auto()


@dataclass
class StageResult:
    stage: AnalysisStage
    passed: bool
    duration_ms: float = 0
    details: str = ""


@dataclass
class AnalysisResult:
    """Everything one run produced; optional parts stay None when their stage is off."""
    config: AnalysisConfig
    family: Family
    reference_value: float = float("nan")
    covariates: tuple[str, ...] = ()
    aic_selection: Optional[dict] = None
    rct_estimates: Optional[RctEstimates] = None
    control_fit: Optional[GlmFit] = None
    influences: Optional[InfluenceScores] = None
    selection: Optional[OptimalSelection] = None
    full: Optional[EstimateReport] = None
    bias_model: Optional[BiasModel] = None
    calibrated_ec: Optional[EcDataset] = None
    calibrated_influences: Optional[InfluenceScores] = None
    calibrated_selection: Optional[OptimalSelection] = None
    sensitivity: Optional[KGrid] = None
    stages: list[StageResult] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(s.passed for s in self.stages)

    def reports(self) -> list[EstimateReport]:
        """direct, aipw, full, aib and caib (when calibrated), all scored against the reference."""
        ref = self.reference_value
        out = [
            self.rct_estimates.direct.against(ref),
            self.rct_estimates.aipw.against(ref),
            self.full.against(ref),
            self.selection.report.renamed("aib", k=self.selection.k_star).against(ref),
        ]
        if self.calibrated_selection is not None:
            out.append(self.calibrated_selection.report.renamed("caib", k=self.calibrated_selection.k_star).against(ref))
        return out

    def table(self) -> pd.DataFrame:
        return comparison_table(self.reports())

    def summary(self) -> str:
        lines = []
        for s in self.stages:
            icon = "✅" if s.passed else "❌"
            lines.append(f"  {icon} {s.stage.name}: {s.details} ({s.duration_ms:.0f}ms)")
        return "Analysis stages:\n" + "\n".join(lines)


class AnalysisPipeline:
    """
    Staged AIB / CAIB analysis.

    Usage:
        pipeline = AnalysisPipeline(config)
        result = pipeline.run(rct, ec)
        print(result.table())
    """

    def __init__(
        self,
        config: AnalysisConfig,
        run_logger: Optional[RunLogger] = None,
        with_sensitivity: bool = True,
        reference_override: Optional[float] = None,
    ):
        self.config = config
        self.run_logger = run_logger
        self.with_sensitivity = with_sensitivity
        self.reference_override = reference_override

    @contextmanager
    def _stage(self, result: AnalysisResult, stage: AnalysisStage):
        if self.run_logger:
            self.run_logger.set_stage(stage.name)
        start = time.time()
        entry = StageResult(stage=stage, passed=False)
        result.stages.append(entry)
        try:
            yield entry
        except EcBorrowError as exc:
            entry.duration_ms = (time.time() - start) * 1000
            entry.details = f"{type(exc).__name__}: {exc}"
            if self.run_logger:
                self.run_logger.log_error(f"{stage.name}: {entry.details}")
            raise PipelineStageError(stage.name, exc) from exc
        entry.passed = True
        entry.duration_ms = (time.time() - start) * 1000
        if self.run_logger and entry.details:
            self.run_logger.log_step(stage.name.replace("_", " ").title(), entry.details)

    def run(self, rct: RctDataset, ec: EcDataset) -> AnalysisResult:
        cfg = self.config
        family = Family.coerce(cfg.family) if cfg.family else outcome_family(rct)
        result = AnalysisResult(config=cfg, family=family, covariates=rct.covariate_names)

        if cfg.aic_select:
            with self._stage(result, AnalysisStage.AIC) as entry:
                rct, ec = self._restrict_covariates(rct, ec, family, result)
                entry.details = f"kept {list(result.covariates)}"

        with self._stage(result, AnalysisStage.OUTCOME_MODEL) as entry:
            result.rct_estimates = estimate_rct(rct, family, known_ps=cfg.known_ps, trim=cfg.trim,
                                                regressor=cfg.regressor)
            result.reference_value = self._reference(result.rct_estimates)
            controls = controls_only(rct)
            result.control_fit = fit_glm(controls.X, controls.Y, family)
            entry.details = (f"{family.value} control model, reference {result.reference_value:.4f}, "
                             f"aipw {result.rct_estimates.aipw.estimate:.4f}")

        with self._stage(result, AnalysisStage.INFLUENCE) as entry:
            result.influences = compute_influences(result.control_fit, controls.X, controls.Y, ec.X, ec.Y)
            entry.details = f"{len(result.influences)} ECs scored"

        ks = cfg.resolve_k_vector(ec.n)
        with self._stage(result, AnalysisStage.SELECTION) as entry:
            result.selection = find_optimal_k(rct, ec, result.influences, result.reference_value, ks, family,
                                              trim=cfg.trim, regressor=cfg.regressor, max_workers=cfg.max_workers)
            result.full = estimate_full(rct, ec, family, trim=cfg.trim, regressor=cfg.regressor)
            entry.details = f"k* = {result.selection.k_star} of {ec.n}, mse {result.selection.report.mse:.5g}"

        if cfg.calibration != "off":
            with self._stage(result, AnalysisStage.CALIBRATION) as entry:
                result.bias_model = fit_bias_model(rct, ec, kind=cfg.calibration)
                result.calibrated_ec = calibrate_ec(ec, result.bias_model)
                # calibrated ECs are scored against the original control model
                result.calibrated_influences = compute_influences(
                    result.control_fit, controls.X, controls.Y, result.calibrated_ec.X, result.calibrated_ec.Y,
                )
                result.calibrated_selection = find_optimal_k(
                    rct, result.calibrated_ec, result.calibrated_influences, result.reference_value, ks,
                    Family.GAUSSIAN, trim=cfg.trim, regressor=cfg.regressor, max_workers=cfg.max_workers,
                )
                entry.details = (f"{cfg.calibration} bias model, calibrated k* = "
                                 f"{result.calibrated_selection.k_star}")

        if self.with_sensitivity:
            with self._stage(result, AnalysisStage.SENSITIVITY) as entry:
                delta = cfg.resolve_delta(ec.n)
                result.sensitivity = sensitivity_sweep(
                    rct, ec, result.influences, result.reference_value, result.selection.k_star, delta, family,
                    trim=cfg.trim, regressor=cfg.regressor, max_workers=cfg.max_workers,
                )
                entry.details = f"{len(result.sensitivity)} grid points around k* (delta {delta})"

        with self._stage(result, AnalysisStage.COMPARISON) as entry:
            entry.details = f"{len(result.reports())} estimators compared"

        logger.info(result.summary())
        return result

    def _reference(self, rct_estimates: RctEstimates) -> float:
        if self.reference_override is not None:
            return float(self.reference_override)
        if self.config.reference == "aipw":
            return rct_estimates.aipw.estimate
        return float(self.config.reference)

    def _restrict_covariates(self, rct: RctDataset, ec: EcDataset, family: Family,
                             result: AnalysisResult) -> tuple[RctDataset, EcDataset]:
        per_arm = aic_union(rct, family)
        union = per_arm["union"]
        result.aic_selection = per_arm
        if not union:
            logger.warning("AIC selected no covariates in either arm; keeping all of them")
            return rct, ec
        cols = [rct.covariate_names.index(name) for name in union]
        rct, ec = rct.with_columns(cols), ec.with_columns(cols)
        result.covariates = rct.covariate_names
        return rct, ec


def aic_union(rct: RctDataset, family) -> dict:
    """Forward AIC per arm (treated, control) and the union, in column order."""
    family = Family.coerce(family)
    names = rct.covariate_names
    treated, control = rct.A == 1, rct.A == 0
    sel1 = select_covariates_aic(rct.X[treated], rct.Y[treated], family, names)
    sel0 = select_covariates_aic(rct.X[control], rct.Y[control], family, names)
    union = sorted(set(sel1) | set(sel0))
    return {
        "family": family.value,
        "treated": [names[j] for j in sel1],
        "control": [names[j] for j in sel0],
        "union": [names[j] for j in union],
    }


def run_analysis(
    rct: RctDataset,
    ec: EcDataset,
    config: AnalysisConfig,
    reference_override: Optional[float] = None,
    run_logger: Optional[RunLogger] = None,
    with_sensitivity: bool = True,
) -> AnalysisResult:
    pipeline = AnalysisPipeline(config, run_logger=run_logger, with_sensitivity=with_sensitivity,
                                reference_override=reference_override)
    return pipeline.run(rct, ec)


__all__ = ["AnalysisStage", "StageResult", "AnalysisResult", "AnalysisPipeline", "aic_union", "run_analysis"]
