"""
CSV ingest and export.

Schema: header row; covariate columns first, then `a` (RCT files only),
then `y`. UTF-8, `.` decimal separator. Missing cells are rejected.
Floats are written with 17 significant digits so that write -> read ->
write reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pandas as pd

from ecborrow.data.datasets import (
    DatasetValidationError,
    DatasetViolation,
    EcDataset,
    OutcomeKind,
    RctDataset,
    ViolationKind,
    validate,
)
from ecborrow.errors import DatasetError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
FLOAT_FORMAT = "%.17g"


def file_digest(path: PathLike) -> str:
    """SHA-256 of a file's bytes (first 16 hex chars)."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        while chunk := f.read(65536):
            h.update(chunk)
    return h.hexdigest()[:16]


def _read_frame(path: PathLike, required: tuple[str, ...]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    frame.columns = [str(c).strip() for c in frame.columns]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DatasetValidationError([
            DatasetViolation(ViolationKind.SHAPE_MISMATCH, f"{path}: missing column '{c}'", column=c)
            for c in missing
        ])
    nulls = frame.isna()
    if nulls.to_numpy().any():
        rows, cols = np.nonzero(nulls.to_numpy())
        raise DatasetValidationError([
            DatasetViolation(ViolationKind.NON_FINITE_VALUE, f"{path}: missing value at row {r}, column {frame.columns[c]}",
                             row=int(r), column=str(frame.columns[c]))
            for r, c in zip(rows.tolist(), cols.tolist())
        ])
    try:
        return frame.astype(float)
    except ValueError as exc:
        raise DatasetValidationError([
            DatasetViolation(ViolationKind.NON_FINITE_VALUE, f"{path}: non-numeric cell ({exc})")
        ]) from exc


def infer_outcome_kind(y: np.ndarray, family: Optional[str] = None) -> OutcomeKind:
    """Binomial family forces binary; otherwise binary iff every value is 0 or 1."""
    if family == "binomial":
        return OutcomeKind.BINARY
    if family == "gaussian":
        return OutcomeKind.CONTINUOUS
    values = np.unique(y[np.isfinite(y)])
    return OutcomeKind.BINARY if values.size and np.isin(values, (0.0, 1.0)).all() else OutcomeKind.CONTINUOUS


def read_rct_csv(path: PathLike, family: Optional[str] = None) -> RctDataset:
    frame = _read_frame(path, ("a", "y"))
    covariates = [c for c in frame.columns if c not in ("a", "y")]
    y = frame["y"].to_numpy()
    rct = RctDataset(X=frame[covariates].to_numpy().reshape(len(frame), len(covariates)), Y=y,
                     A=frame["a"].to_numpy(), outcome_kind=infer_outcome_kind(y, family),
                     covariate_names=tuple(covariates))
    logger.info(f"Loaded RCT {path}: n={rct.n}, p={rct.p}, treated={rct.n_treated}")
    return validate(rct)


def read_ec_csv(path: PathLike, rct: Optional[RctDataset] = None, family: Optional[str] = None) -> EcDataset:
    frame = _read_frame(path, ("y",))
    if "a" in frame.columns:
        if (frame["a"] != 0).any():
            raise DatasetValidationError([
                DatasetViolation(ViolationKind.NON_BINARY_TREATMENT, f"{path}: external controls must have a=0", column="a")
            ])
        frame = frame.drop(columns=["a"])
    covariates = [c for c in frame.columns if c != "y"]
    y = frame["y"].to_numpy()
    kind = rct.outcome_kind if rct is not None else infer_outcome_kind(y, family)
    ec = EcDataset(X=frame[covariates].to_numpy().reshape(len(frame), len(covariates)), Y=y,
                   outcome_kind=kind, covariate_names=tuple(covariates))
    logger.info(f"Loaded EC {path}: n={ec.n}, p={ec.p}")
    return validate(ec, paired_rct=rct)


def rct_frame(rct: RctDataset) -> pd.DataFrame:
    frame = pd.DataFrame(rct.X, columns=list(rct.covariate_names))
    frame["a"] = rct.A
    frame["y"] = rct.Y
    return frame


def ec_frame(ec: EcDataset) -> pd.DataFrame:
    frame = pd.DataFrame(ec.X, columns=list(ec.covariate_names))
    frame["y"] = ec.Y
    return frame


def write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")
    return path


def write_rct_csv(rct: RctDataset, path: PathLike) -> Path:
    return write_frame(rct_frame(rct), path)


def write_ec_csv(ec: EcDataset, path: PathLike) -> Path:
    return write_frame(ec_frame(ec), path)


def write_json(payload: dict[str, Any], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=False, default=_json_default) + "\n", encoding="utf-8")
    return path


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
