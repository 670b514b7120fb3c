"""
Seedable data-generating mechanisms.

    demo          X ~ N(0,1); constant effect -1; 30% of ECs exchangeable,
                  the rest shifted by the linear bias 0.8 + 0.5x
    mech1         binary outcome, quadratic EC bias, 20 outliers with Y = 1
    mech2         continuous outcome on two covariates, cubic EC bias,
                  20 corner outliers with Y = -5
    exchangeable  RCT as in demo, every EC drawn from the RCT control law

Random numbers come from numpy's Generator over the counter-based Philox
bit generator, so a (mechanism, sizes, seed) triple always yields the
same data within one numpy release. Outliers occupy the last 20 pooled
covariate draws, which always fall in the EC segment.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.special import expit

from ecborrow.data.datasets import EcDataset, OutcomeKind, RctDataset, validate
from ecborrow.errors import SimulationError

logger = logging.getLogger(__name__)

MECHANISMS = ("demo", "mech1", "mech2", "exchangeable")
N_OUTLIERS = 20
NOISE_SD = 0.5


class TooFewEcsError(SimulationError):
    """The mechanism needs more external controls than requested."""
    pass


class UnknownMechanismError(SimulationError):
    pass


@dataclass(frozen=True)
class MechanismSpec:
    kind: str
    n_rct: int
    n_ec: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MECHANISMS:
            raise UnknownMechanismError(f"unknown mechanism {self.kind!r}; expected one of {MECHANISMS}")
        min_rct = 10 if self.kind == "demo" else 4
        if self.n_rct < min_rct:
            raise SimulationError(f"{self.kind} needs n_rct >= {min_rct}, got {self.n_rct}")
        minimum = min_ec(self.kind)
        if self.n_ec < minimum:
            raise TooFewEcsError(f"{self.kind} needs n_ec >= {minimum}, got {self.n_ec}")
        if self.seed < 0:
            raise SimulationError("seed must be non-negative")


@dataclass(frozen=True)
class SimulatedData:
    rct: RctDataset
    ec: EcDataset
    true_ate: float
    spec: MechanismSpec

    def meta(self) -> dict:
        return {
            "mechanism": self.spec.kind,
            "n_rct": self.spec.n_rct,
            "n_ec": self.spec.n_ec,
            "seed": self.spec.seed,
            "true_ate": self.true_ate,
            "outcome_kind": self.rct.outcome_kind.value,
            "covariates": list(self.rct.covariate_names),
        }


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def min_ec(kind: str) -> int:
    return N_OUTLIERS if kind in ("mech1", "mech2") else 10 if kind == "demo" else 1


def default_family(kind: str) -> str:
    if kind not in MECHANISMS:
        raise UnknownMechanismError(f"unknown mechanism {kind!r}")
    return "binomial" if kind == "mech1" else "gaussian"


# -- True ATE --

@lru_cache(maxsize=None)
def _mech1_ate() -> float:
    value, _ = quad(lambda x: expit(x + 1) - expit(x - 1), 0.0, 2.0, epsabs=1e-10, epsrel=1e-10)
    return 0.5 * value


def true_ate(mechanism: str) -> float:
    if mechanism == "mech1":
        return _mech1_ate()
    if mechanism == "mech2":
        return 3.0
    if mechanism in ("demo", "exchangeable"):
        return -1.0
    raise UnknownMechanismError(f"unknown mechanism {mechanism!r}; expected one of {MECHANISMS}")


# -- Generators --

def _split(rng: np.random.Generator, spec: MechanismSpec, X: np.ndarray, outcome_kind: OutcomeKind,
           y_control: Callable, effect: Callable, y_ec: np.ndarray) -> SimulatedData:
    n1 = spec.n_rct
    X_rct, X_ec = X[:n1], X[n1:]
    A = rng.binomial(1, 0.5, size=n1).astype(float)
    Y_rct = np.where(A == 1, effect(X_rct), y_control(X_rct))
    rct = RctDataset(X=X_rct, Y=Y_rct, A=A, outcome_kind=outcome_kind)
    ec = EcDataset(X=X_ec, Y=y_ec, outcome_kind=outcome_kind)
    data = SimulatedData(rct=validate(rct), ec=validate(ec, paired_rct=rct), true_ate=true_ate(spec.kind), spec=spec)
    logger.debug(f"Generated {spec.kind}: n_rct={n1}, n_ec={spec.n_ec}, seed={spec.seed}")
    return data


def gen_mech1(n_rct: int, n_ec: int, seed: int = 0) -> SimulatedData:
    spec = MechanismSpec("mech1", n_rct, n_ec, seed)
    rng = make_rng(seed)
    n = n_rct + n_ec
    x = rng.uniform(0.0, 2.0, size=n)
    x[-N_OUTLIERS:] = rng.uniform(1.8, 2.0, size=N_OUTLIERS)

    x_ec = x[n_rct:]
    y_ec = rng.binomial(1, expit(x_ec - 1 + 2.5 * (x_ec - 1) ** 2)).astype(float)
    y_ec[-N_OUTLIERS:] = 1.0

    def control(xr):
        return rng.binomial(1, expit(xr[:, 0] - 1)).astype(float)

    def treated(xr):
        return rng.binomial(1, expit(xr[:, 0] + 1)).astype(float)

    return _split(rng, spec, x.reshape(-1, 1), OutcomeKind.BINARY, control, treated, y_ec)


def gen_mech2(n_rct: int, n_ec: int, seed: int = 0) -> SimulatedData:
    spec = MechanismSpec("mech2", n_rct, n_ec, seed)
    rng = make_rng(seed)
    n = n_rct + n_ec
    X = rng.uniform(0.0, 2.0, size=(n, 2))
    X[-N_OUTLIERS:] = rng.uniform(1.8, 2.0, size=(N_OUTLIERS, 2))

    X_ec = X[n_rct:]
    y_ec = (-2 + 4 * X_ec[:, 0] + 2 * X_ec[:, 1] + 2 * (X_ec[:, 0] - 1) ** 3
            + rng.normal(0.0, NOISE_SD, size=n_ec))
    y_ec[-N_OUTLIERS:] = -5.0

    # Y(1) = Y(0) + 3 with a shared noise draw
    noise = rng.normal(0.0, NOISE_SD, size=n_rct)

    def control(Xr):
        return 2 * Xr[:, 0] + 2 * Xr[:, 1] + noise

    def treated(Xr):
        return control(Xr) + 3.0

    return _split(rng, spec, X, OutcomeKind.CONTINUOUS, control, treated, y_ec)


def _linear_rct(rng: np.random.Generator, n_rct: int):
    noise = rng.normal(0.0, NOISE_SD, size=n_rct)

    def control(Xr):
        return 1 + Xr[:, 0] + noise

    def treated(Xr):
        return control(Xr) - 1.0

    return control, treated


def gen_demo(n_rct: int, n_ec: int, seed: int = 0) -> SimulatedData:
    spec = MechanismSpec("demo", n_rct, n_ec, seed)
    rng = make_rng(seed)
    x = rng.normal(0.0, 1.0, size=n_rct + n_ec)
    x_ec = x[n_rct:]

    n_exch = int(round(0.3 * n_ec))
    biased = np.ones(n_ec, dtype=bool)
    biased[rng.permutation(n_ec)[:n_exch]] = False
    y_ec = 1 + x_ec + np.where(biased, 0.8 + 0.5 * x_ec, 0.0) + rng.normal(0.0, NOISE_SD, size=n_ec)

    control, treated = _linear_rct(rng, n_rct)
    return _split(rng, spec, x.reshape(-1, 1), OutcomeKind.CONTINUOUS, control, treated, y_ec)


def gen_exchangeable(n_rct: int, n_ec: int, seed: int = 0) -> SimulatedData:
    spec = MechanismSpec("exchangeable", n_rct, n_ec, seed)
    rng = make_rng(seed)
    x = rng.normal(0.0, 1.0, size=n_rct + n_ec)
    x_ec = x[n_rct:]
    y_ec = 1 + x_ec + rng.normal(0.0, NOISE_SD, size=n_ec)
    control, treated = _linear_rct(rng, n_rct)
    return _split(rng, spec, x.reshape(-1, 1), OutcomeKind.CONTINUOUS, control, treated, y_ec)


GENERATORS: dict[str, Callable[..., SimulatedData]] = {
    "demo": gen_demo,
    "mech1": gen_mech1,
    "mech2": gen_mech2,
    "exchangeable": gen_exchangeable,
}


def generate(mechanism: str, n_rct: int, n_ec: int, seed: int = 0) -> SimulatedData:
    try:
        gen = GENERATORS[mechanism]
    except KeyError:
        raise UnknownMechanismError(f"unknown mechanism {mechanism!r}; expected one of {MECHANISMS}") from None
    return gen(n_rct, n_ec, seed)

