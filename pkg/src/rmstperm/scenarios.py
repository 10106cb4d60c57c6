"""Data-generating processes S1-S7 (event times) and C1-C3 (censoring).

Group 1 always follows a fixed law; the group-2 law has one free parameter,
calibrated so that ``mu_2 - mu_1 = delta`` on ``[0, tau]``.

======  ======================  ==========================================
name    group 1                 group 2 (free parameter)
======  ======================  ==========================================
S1      Exp(0.2)                Exp(rate)
S2      Exp(0.2)                hazard 0.2 on [0, 2], ``rate`` after 2
S3      Exp(0.2)                hazard 0.5 on [0, c], 0.05 after ``c``
S4      logN(2, 0.5)            logN(meanlog, 0.5)
S5      Weib(3, 8)              Weib(shape, 14)
S6      Weib(3, 8)              Weib(1.5, scale)
S7      Weib(2, 7)              hazard 0.15 on [0, c], 0.02 after ``c``
======  ======================  ==========================================

Censoring: C1 = Weib(3, 18) vs Weib(0.5, 40); C2 = Unif[0, 25] in both
groups; C3 = Weib(3, 15) in both groups.

Log-normal laws are given as ``logN(meanlog, sdlog)``. The S4 dispersion is
the one whose censoring proportions under C1-C3 come out as (14%, 35%),
(33%, 33%) and (21%, 21%): a log-scale variance of 0.25, i.e. sdlog 0.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np

from .distributions import (
    Exponential,
    LogNormal,
    NoCensoring,
    PiecewiseExponential,
    Uniform,
    Weibull,
)
from .errors import CalibrationError, InvalidInputError, PathologicalConfigError
from .rmst import TheoreticalModel, true_rmst
from .survival import Sample, estimability

__all__ = [
    "SURVIVAL_SCENARIOS",
    "CENSORING_SCENARIOS",
    "PAPER_DELTAS",
    "PAPER_SIZES",
    "ScenarioSpec",
    "Dataset",
    "solve_param",
    "scenario_laws",
    "true_values",
    "sample_survival",
    "generate_dataset",
]

SURVIVAL_SCENARIOS = ("S1", "S2", "S3", "S4", "S5", "S6", "S7")
CENSORING_SCENARIOS = ("C1", "C2", "C3")
PAPER_DELTAS = (0.0, 0.5, 1.0, 1.5, 2.0)
PAPER_SIZES = ((24, 16), (20, 20), (16, 24))
MAX_REGENERATIONS = 10_000
S4_SDLOG = 0.5


@dataclass(frozen=True)
class _Family:
    group1: object
    build: Callable[[float], object]
    base: float
    lower: float  # open lower limit of the parameter domain
    upper: float  # upper limit (inclusive when finite)
    label: str


def _families(tau):
    return {
        "S1": _Family(Exponential(0.2), Exponential, 0.2, 0.0, math.inf, "rate"),
        "S2": _Family(Exponential(0.2), lambda p: PiecewiseExponential(2.0, 0.2, p), 0.2, 0.0, math.inf, "rate after t=2"),
        "S3": _Family(Exponential(0.2), lambda p: PiecewiseExponential(p, 0.5, 0.05), 1.5, 0.0, tau, "breakpoint"),
        "S4": _Family(LogNormal(2.0, S4_SDLOG), lambda p: LogNormal(p, S4_SDLOG), 2.0, -math.inf, math.inf, "meanlog"),
        "S5": _Family(Weibull(3.0, 8.0), lambda p: Weibull(p, 14.0), 1.0, 0.0, math.inf, "shape"),
        "S6": _Family(Weibull(3.0, 8.0), lambda p: Weibull(1.5, p), 8.0, 0.0, math.inf, "scale"),
        "S7": _Family(Weibull(2.0, 7.0), lambda p: PiecewiseExponential(p, 0.15, 0.02), 4.5, 0.0, tau, "breakpoint"),
    }


_CENSORING = {
    "C1": (Weibull(3.0, 18.0), Weibull(0.5, 40.0)),
    "C2": (Uniform(25.0), Uniform(25.0)),
    "C3": (Weibull(3.0, 15.0), Weibull(3.0, 15.0)),
}


@dataclass(frozen=True)
class ScenarioSpec:
    """One cell of the simulation grid.

    ``n1``/``n2`` are the actual group sizes; ``k`` is the multiplier of the
    base design and only used for labelling.
    """

    survival: str
    censoring: str
    delta: float = 0.0
    n1: int = 20
    n2: int = 20
    tau: float = 10.0
    k: int = 1

    def __post_init__(self):
        if self.survival not in SURVIVAL_SCENARIOS:
            raise InvalidInputError(f"unknown survival scenario {self.survival!r}")
        if self.censoring not in CENSORING_SCENARIOS:
            raise InvalidInputError(f"unknown censoring scenario {self.censoring!r}")
        if not (self.delta >= 0 and math.isfinite(self.delta)):
            raise InvalidInputError(f"delta must be >= 0, got {self.delta!r}")
        if self.n1 < 2 or self.n2 < 2:
            raise InvalidInputError("each group needs at least 2 subjects")
        if not self.tau > 0:
            raise InvalidInputError("tau must be positive")
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def label(self) -> str:
        return f"{self.survival}/{self.censoring} n=({self.n1},{self.n2}) delta={self.delta:g}"

    @property
    def solved_param(self) -> float:
        return solve_param(self)

    def with_sizes(self, n1: int, n2: int, k: int = 1) -> "ScenarioSpec":
        return replace(self, n1=n1, n2=n2, k=k)


def _rmst_of(dist, tau):
    return true_rmst(TheoreticalModel.from_distributions(dist, NoCensoring()), tau)


def _bisect(fn, lo, hi, tol):
    f_lo = fn(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = fn(mid)
        if abs(f_mid) < tol or mid in (lo, hi):
            return mid
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _bracket(fn, fam):
    """Expand geometrically around the base value until ``fn`` changes sign."""
    f0 = fn(fam.base)
    if f0 == 0:
        return fam.base, fam.base
    if math.isfinite(fam.lower) and math.isfinite(fam.upper):
        lo, hi = fam.lower + 1e-9 * (fam.upper - fam.lower), fam.upper
        return (lo, hi) if (fn(lo) < 0) != (fn(hi) < 0) else None
    additive = math.isinf(fam.lower)
    lo = hi = fam.base
    width = 0.5
    for _ in range(60):
        if additive:
            lo, hi = lo - width, hi + width
            width *= 2.0
        else:
            lo, hi = lo / 2.0, hi * 2.0
        for c in (lo, hi):
            if (fn(c) < 0) != (f0 < 0):
                return min(c, fam.base), max(c, fam.base)
    return None


@lru_cache(maxsize=None)
def _solve(survival: str, delta: float, tau: float) -> float:
    fam = _families(tau)[survival]
    mu1 = _rmst_of(fam.group1, tau)
    target = mu1 + delta
    if delta == 0.0 and survival in ("S1", "S2"):
        return 0.2
    if target > tau:
        raise CalibrationError(f"{survival}: target RMST {target:g} exceeds tau={tau:g}")

    def resid(p):
        return _rmst_of(fam.build(p), tau) - target

    bracket = _bracket(resid, fam)
    if bracket is None:
        lo = fam.lower if math.isfinite(fam.lower) else -50.0
        hi = fam.upper if math.isfinite(fam.upper) else 1e6
        ends = []
        for p in (lo + 1e-9, hi):
            try:
                ends.append(_rmst_of(fam.build(p), tau))
            except Exception:  # parameter outside the family's domain
                pass
        span = f"[{min(ends):.6g}, {max(ends):.6g}]" if ends else "unknown"
        raise CalibrationError(
            f"{survival}: no {fam.label} gives RMST {target:.6g}; attainable range approx. {span}"
        )
    lo, hi = bracket
    if lo == hi:
        return lo
    return _bisect(resid, lo, hi, 1e-11)


def solve_param(scenario: ScenarioSpec) -> float:
    """Free group-2 parameter giving ``mu_2 = mu_1 + delta`` on ``[0, tau]``."""
    return _solve(scenario.survival, scenario.delta, scenario.tau)


def scenario_laws(scenario: ScenarioSpec):
    """``(event1, event2, censoring1, censoring2)`` distributions of a scenario."""
    fam = _families(scenario.tau)[scenario.survival]
    event2 = fam.build(solve_param(scenario))
    cens1, cens2 = _CENSORING[scenario.censoring]
    return fam.group1, event2, cens1, cens2


def scenario_models(scenario: ScenarioSpec):
    e1, e2, c1, c2 = scenario_laws(scenario)
    return TheoreticalModel.from_distributions(e1, c1), TheoreticalModel.from_distributions(e2, c2)


def true_values(scenario: ScenarioSpec) -> tuple[float, float]:
    """True RMSTs ``(mu_1, mu_2)`` of the calibrated scenario (quadrature)."""
    m1, m2 = scenario_models(scenario)
    return (
        true_rmst(m1, scenario.tau, closed_form=False),
        true_rmst(m2, scenario.tau, closed_form=False),
    )


def sample_survival(dist, rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` i.i.d. draws from ``dist``."""
    return np.asarray(dist.sample(rng, count), dtype=float)


class Dataset(NamedTuple):
    sample1: Sample
    sample2: Sample
    regenerations: int


def _draw_group(event, cens, rng, n, group):
    t = sample_survival(event, rng, n)
    c = sample_survival(cens, rng, n)
    return Sample(np.minimum(t, c), (t <= c).astype(np.int8), group)


def generate_dataset(
    scenario: ScenarioSpec,
    rng: np.random.Generator,
    max_regenerations: int = MAX_REGENERATIONS,
) -> Dataset:
    """Draw one two-group dataset, redrawing it whole while either group's
    Kaplan-Meier curve is not estimable on ``[0, tau]``."""
    e1, e2, c1, c2 = scenario_laws(scenario)
    for attempt in range(max_regenerations + 1):
        s1 = _draw_group(e1, c1, rng, scenario.n1, 1)
        s2 = _draw_group(e2, c2, rng, scenario.n2, 2)
        if (
            estimability(s1, scenario.tau).fully_estimable_on_window
            and estimability(s2, scenario.tau).fully_estimable_on_window
        ):
            return Dataset(s1, s2, attempt)
    raise PathologicalConfigError(
        f"{scenario.label}: no estimable dataset after {max_regenerations} regenerations"
    )
