"""
Analysis Configuration — immutable settings for the borrowing pipeline.

Values come from (lowest to highest precedence) dataclass defaults,
environment variables, an optional JSON config file, and CLI flags.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Union

from ecborrow.errors import ConfigError

FAMILIES = ("gaussian", "binomial")
CALIBRATIONS = ("off", "linear", "kernel")
REGRESSORS = ("glm", "kernel")


def _env_threads() -> int:
    raw = os.environ.get("ECBORROW_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class NumericsConfig:
    """Solver constants shared by the model fitters."""

    # IRLS
    irls_tol: float = 1e-8
    irls_max_iter: int = 100
    max_step_halvings: int = 30
    separation_threshold: float = 30.0

    # Influence Hessian conditioning (relative to trace / dim)
    hessian_floor: float = 1e-10
    hessian_jitter: float = 1e-8

    # Kernel ridge
    krls_log10_min: float = -6.0
    krls_log10_max: float = 2.0
    krls_grid_size: int = 17

    # Calibration
    sampling_clamp: float = 1e-6
    calibration_guard: float = 1e-3


NUMERICS = NumericsConfig()


@dataclass(frozen=True)
class AnalysisConfig:
    """
    Pipeline switches for one analysis run.

    `k_vector` is "auto", a comma-separated list ("0,5,10"), or a range
    "start:stop:step" (stop inclusive). `reference` is "aipw" or a
    literal float.
    """

    # Paths
    rct_csv: Optional[str] = None
    ec_csv: Optional[str] = None
    out_dir: str = "ecborrow_out"

    # Model
    family: Optional[str] = None          # None = infer from the outcome column
    trim: float = 0.01
    regressor: str = "glm"
    known_ps: Optional[float] = None

    # Selection
    k_vector: str = "auto"
    reference: Union[str, float] = "aipw"
    sensitivity_delta: Optional[int] = None

    # Calibration / covariates
    calibration: str = "off"
    aic_select: bool = False

    # Runtime
    seed: int = 0
    max_workers: int = field(default_factory=_env_threads)
    verbose: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not (0.0 < self.trim < 0.5):
            raise ConfigError(f"trim must lie in (0, 0.5), got {self.trim}")
        if self.family is not None and self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.calibration not in CALIBRATIONS:
            raise ConfigError(f"unknown calibration {self.calibration!r}; expected one of {CALIBRATIONS}")
        if self.regressor not in REGRESSORS:
            raise ConfigError(f"unknown regressor {self.regressor!r}; expected one of {REGRESSORS}")
        if self.known_ps is not None and not (0.0 < self.known_ps < 1.0):
            raise ConfigError(f"known_ps must lie in (0, 1), got {self.known_ps}")
        if self.sensitivity_delta is not None and self.sensitivity_delta < 1:
            raise ConfigError("sensitivity_delta must be at least 1")
        if self.max_workers < 1:
            raise ConfigError("max_workers must be at least 1")
        ref = self.reference
        if isinstance(ref, str) and ref != "aipw":
            raise ConfigError(f"reference must be 'aipw' or a number, got {ref!r}")
        if not isinstance(ref, str) and not math.isfinite(ref):
            raise ConfigError("literal reference value must be finite")

    # -- Construction --

    @staticmethod
    def parse_reference(raw: Union[str, float, None]) -> Union[str, float, None]:
        """Turn a CLI/config reference token into 'aipw' or a float."""
        if raw is None or raw == "aipw":
            return raw
        try:
            return float(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"reference must be 'aipw' or a number, got {raw!r}") from exc

    @classmethod
    def from_file(cls, path: Union[str, Path], base: Optional["AnalysisConfig"] = None) -> "AnalysisConfig":
        """Load settings from a JSON object on top of `base`; unknown keys are rejected."""
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return (base or cls()).merged(data)

    def merged(self, overrides: dict[str, Any]) -> "AnalysisConfig":
        """Return a copy with every non-None override applied."""
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        updates = {k: v for k, v in overrides.items() if v is not None}
        if "reference" in updates:
            updates["reference"] = self.parse_reference(updates["reference"])
        return replace(self, **updates)

    # -- Derived --

    def resolve_k_vector(self, n_ec: int) -> list[int]:
        """Expand the k_vector spec against the EC count."""
        spec = str(self.k_vector).strip()
        if spec == "auto":
            step = max(1, round(n_ec / 40))
            ks = list(range(0, n_ec + 1, step))
            if ks[-1] != n_ec:
                ks.append(n_ec)
            return ks
        try:
            if ":" in spec:
                parts = [int(p) for p in spec.split(":")]
                start, stop = parts[0], parts[1]
                step = parts[2] if len(parts) > 2 else 1
                if step < 1:
                    raise ValueError("step must be positive")
                ks = list(range(start, stop + 1, step))
            else:
                ks = [int(p) for p in spec.split(",") if p.strip()]
        except ValueError as exc:
            raise ConfigError(f"malformed k_vector {spec!r}: {exc}") from exc
        return sorted(set(ks))

    def resolve_delta(self, n_ec: int) -> int:
        if self.sensitivity_delta is not None:
            return self.sensitivity_delta
        return max(1, round(0.1 * n_ec))

    @property
    def digest(self) -> str:
        """Short hash of the settings that affect numerical output."""
        payload = {k: v for k, v in asdict(self).items() if k not in ("max_workers", "verbose", "out_dir")}
        data = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(data.encode()).hexdigest()[:16]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)
