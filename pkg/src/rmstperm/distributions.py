"""Parametric event-time and censoring laws used by the simulation scenarios.

Weibull laws are parametrised as ``(shape, scale)`` with survival
``exp(-(t / scale) ** shape)`` and log-normal laws as ``(meanlog, sdlog)``,
following R's ``rweibull`` / ``rlnorm`` conventions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import ClassVar

import numpy as np
from scipy import special

from .errors import InvalidInputError

__all__ = [
    "Exponential",
    "Weibull",
    "LogNormal",
    "PiecewiseExponential",
    "Uniform",
    "NoCensoring",
]


def _positive(**params):
    for name, value in params.items():
        if not (value > 0 and math.isfinite(value)):
            raise InvalidInputError(f"{name} must be positive and finite, got {value!r}")


class _Distribution:
    kind: ClassVar[str]
    breakpoints: tuple = ()
    rmst = None  # closed-form ``tau -> mu`` where one exists

    def cdf(self, t):
        return 1.0 - self.sf(t)

    def pdf(self, t):
        return self.hazard(t) * self.sf(t)

    def params(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def describe(self) -> str:
        args = ", ".join(f"{v:g}" for v in self.params().values())
        return f"{self.kind}({args})"


@dataclass(frozen=True)
class Exponential(_Distribution):
    rate: float
    kind: ClassVar[str] = "exponential"

    def __post_init__(self):
        _positive(rate=self.rate)

    def sf(self, t):
        return np.exp(-self.rate * np.asarray(t, dtype=float))

    def hazard(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.rate)

    def cumulative_hazard(self, t):
        return self.rate * np.asarray(t, dtype=float)

    def rmst(self, tau):
        return -math.expm1(-self.rate * tau) / self.rate

    def sample(self, rng, size):
        return rng.exponential(1.0 / self.rate, size)


@dataclass(frozen=True)
class Weibull(_Distribution):
    shape: float
    scale: float
    kind: ClassVar[str] = "weibull"

    def __post_init__(self):
        _positive(shape=self.shape, scale=self.scale)

    def sf(self, t):
        return np.exp(-self.cumulative_hazard(t))

    def cumulative_hazard(self, t):
        return (np.asarray(t, dtype=float) / self.scale) ** self.shape

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return self.shape / self.scale * (t / self.scale) ** (self.shape - 1.0)

    def sample(self, rng, size):
        return self.scale * rng.weibull(self.shape, size)


@dataclass(frozen=True)
class LogNormal(_Distribution):
    meanlog: float
    sdlog: float
    kind: ClassVar[str] = "lognormal"

    def __post_init__(self):
        if not math.isfinite(self.meanlog):
            raise InvalidInputError("meanlog must be finite")
        _positive(sdlog=self.sdlog)

    def _z(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return (np.log(t) - self.meanlog) / self.sdlog

    def sf(self, t):
        return special.ndtr(-self._z(t))

    def cumulative_hazard(self, t):
        return -special.log_ndtr(-self._z(t))

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        z = self._z(t)
        # phi(z) / (sdlog * t * Phi(-z)) computed on the log scale
        with np.errstate(divide="ignore", invalid="ignore"):
            log_h = -0.5 * z * z - 0.5 * math.log(2 * math.pi) - np.log(self.sdlog * t) - special.log_ndtr(-z)
            out = np.exp(log_h)
        return np.where(t > 0, out, 0.0)

    def sample(self, rng, size):
        return np.exp(rng.normal(self.meanlog, self.sdlog, size))


@dataclass(frozen=True)
class PiecewiseExponential(_Distribution):
    """Hazard ``rate_before`` on ``[0, breakpoint]`` and ``rate_after`` beyond."""

    breakpoint: float
    rate_before: float
    rate_after: float
    kind: ClassVar[str] = "piecewise_exponential"

    def __post_init__(self):
        _positive(breakpoint=self.breakpoint, rate_before=self.rate_before, rate_after=self.rate_after)

    @property
    def breakpoints(self):
        return (self.breakpoint,)

    def cumulative_hazard(self, t):
        t = np.asarray(t, dtype=float)
        c = self.breakpoint
        return self.rate_before * np.minimum(t, c) + self.rate_after * np.maximum(t - c, 0.0)

    def sf(self, t):
        return np.exp(-self.cumulative_hazard(t))

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t <= self.breakpoint, self.rate_before, self.rate_after)

    def rmst(self, tau):
        a, b, c = self.rate_before, self.rate_after, self.breakpoint
        if tau <= c:
            return -math.expm1(-a * tau) / a
        return -math.expm1(-a * c) / a + math.exp(-a * c) * (-math.expm1(-b * (tau - c))) / b

    def sample(self, rng, size):
        # invert the piecewise-linear cumulative hazard at Exp(1) draws
        e = rng.standard_exponential(size)
        h_c = self.rate_before * self.breakpoint
        return np.where(
            e <= h_c,
            e / self.rate_before,
            self.breakpoint + (e - h_c) / self.rate_after,
        )


@dataclass(frozen=True)
class Uniform(_Distribution):
    """Uniform law on ``[0, upper]``."""

    upper: float
    kind: ClassVar[str] = "uniform"

    def __post_init__(self):
        _positive(upper=self.upper)

    @property
    def breakpoints(self):
        return (self.upper,)

    def sf(self, t):
        return np.clip(1.0 - np.asarray(t, dtype=float) / self.upper, 0.0, 1.0)

    def cumulative_hazard(self, t):
        with np.errstate(divide="ignore"):
            return -np.log(self.sf(t))

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(t < self.upper, 1.0 / (self.upper - t), np.inf)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= 0) & (t < self.upper), 1.0 / self.upper, 0.0)

    def rmst(self, tau):
        if tau <= self.upper:
            return tau - tau * tau / (2.0 * self.upper)
        return self.upper / 2.0

    def sample(self, rng, size):
        return rng.uniform(0.0, self.upper, size)


@dataclass(frozen=True)
class NoCensoring(_Distribution):
    """Censoring time that is always infinite."""

    kind: ClassVar[str] = "none"

    def sf(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def hazard(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def sample(self, rng, size):
        return np.full(size, np.inf)
