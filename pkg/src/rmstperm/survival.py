"""Right-censored samples, counting processes and product-limit estimators.

All estimators return :class:`StepFunction` objects that store their exact jump
lists, so integrals over them are finite sums with no discretisation error.

Ties between an event and a censoring at the same time are resolved with the
usual convention that the event happens first. Under that convention the
identity ``S(t-) * G(t-) == Y(t) / n`` holds exactly at every time, where
``S`` and ``G`` are the Kaplan-Meier curves of the event and censoring times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "Observation",
    "Sample",
    "StepFunction",
    "EventTable",
    "EstimabilityReport",
    "event_table",
    "counting_processes",
    "kaplan_meier",
    "nelson_aalen",
    "censoring_km",
    "integrate_step",
    "estimability",
]


@dataclass(frozen=True)
class Observation:
    """One subject: observed time ``min(T, C)``, event indicator and group."""

    time: float
    status: int
    group: int = 1

    def __post_init__(self):
        if not (self.time >= 0 and math.isfinite(self.time)):
            raise InvalidInputError(f"time must be finite and >= 0, got {self.time!r}")
        if self.status not in (0, 1):
            raise InvalidInputError(f"status must be 0 or 1, got {self.status!r}")


class Sample:
    """Right-censored observations of a single group.

    Parameters
    ----------
    times : array_like
        Observed times ``X_j = min(T_j, C_j)``, non-negative.
    statuses : array_like
        Event indicators, 1 if ``X_j`` is an event time, 0 if censored.
    group : int
        Group label, stored for bookkeeping only.
    """

    __slots__ = ("times", "statuses", "group")

    def __init__(self, times, statuses, group: int = 1):
        times = np.array(times, dtype=float).reshape(-1)
        statuses_raw = np.asarray(statuses).reshape(-1)
        if times.shape != statuses_raw.shape:
            raise InvalidInputError("times and statuses must have the same length")
        if times.size and not np.all(np.isfinite(times)):
            raise InvalidInputError("times must be finite")
        if np.any(times < 0):
            raise InvalidInputError("times must be non-negative")
        if not np.all((statuses_raw == 0) | (statuses_raw == 1)):
            raise InvalidInputError("statuses must be 0 or 1")
        statuses = statuses_raw.astype(np.int8)
        times.flags.writeable = False
        statuses.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "statuses", statuses)
        object.__setattr__(self, "group", int(group))

    def __setattr__(self, name, value):
        raise AttributeError("Sample is immutable")

    @classmethod
    def from_observations(cls, observations: Iterable[Observation]) -> "Sample":
        observations = list(observations)
        groups = {o.group for o in observations}
        if len(groups) > 1:
            raise InvalidInputError(f"observations span several groups: {sorted(groups)}")
        group = groups.pop() if groups else 1
        return cls([o.time for o in observations], [o.status for o in observations], group)

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def size(self) -> int:
        return len(self)

    def observations(self) -> list[Observation]:
        return [
            Observation(float(t), int(d), self.group)
            for t, d in zip(self.times, self.statuses)
        ]

    def pairs(self) -> list[tuple[float, int]]:
        """Sorted ``(time, status)`` pairs; the multiset that permutations preserve."""
        return sorted(zip(self.times.tolist(), self.statuses.tolist()))

    def scaled(self, factor: float) -> "Sample":
        return Sample(self.times * factor, self.statuses, self.group)

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.group == other.group
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.statuses, other.statuses)
        )

    def __repr__(self):
        return f"Sample(n={len(self)}, events={int(self.statuses.sum())}, group={self.group})"


class StepFunction:
    """Piecewise-constant function on ``[0, inf)`` with finitely many jumps.

    ``value(t)`` is ``values[k]`` for the largest ``jump_times[k] <= t`` and
    ``initial_value`` before the first jump. With ``left_continuous=True`` the
    comparison is strict instead (``jump_times[k] < t``), which is how the
    at-risk process ``Y`` is represented.

    ``defined_to`` marks where the estimator stops being identified (for a
    Kaplan-Meier curve whose largest observation is censored); evaluation
    beyond it simply carries the last value forward.
    """

    __slots__ = ("jump_times", "values", "initial_value", "left_continuous", "defined_to")

    def __init__(
        self,
        jump_times: Sequence[float],
        values: Sequence[float],
        initial_value: float = 0.0,
        *,
        left_continuous: bool = False,
        defined_to: float = math.inf,
    ):
        jump_times = np.array(jump_times, dtype=float).reshape(-1)
        values = np.array(values, dtype=float).reshape(-1)
        if jump_times.shape != values.shape:
            raise InvalidInputError("jump_times and values must have the same length")
        if jump_times.size and (np.any(np.diff(jump_times) <= 0) or jump_times[0] < 0):
            raise InvalidInputError("jump_times must be non-negative and strictly increasing")
        jump_times.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "jump_times", jump_times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "initial_value", float(initial_value))
        object.__setattr__(self, "left_continuous", bool(left_continuous))
        object.__setattr__(self, "defined_to", float(defined_to))

    def __setattr__(self, name, value):
        raise AttributeError("StepFunction is immutable")

    @classmethod
    def constant(cls, value: float) -> "StepFunction":
        return cls([], [], value)

    def _lookup(self, t, side):
        t_arr = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_times, t_arr, side=side)
        table = np.concatenate(([self.initial_value], self.values))
        out = table[idx]
        return float(out) if out.ndim == 0 else out

    def __call__(self, t):
        return self._lookup(t, "left" if self.left_continuous else "right")

    def left_limit(self, t):
        """Value just before ``t``, i.e. ``lim_{s -> t-} f(s)``."""
        return self._lookup(t, "left")

    def right_limit(self, t):
        """Value just after ``t``."""
        return self._lookup(t, "right")

    def jumps(self) -> np.ndarray:
        """Jump sizes ``f(t_k) - f(t_k-)`` at each ``jump_times[k]``."""
        previous = np.concatenate(([self.initial_value], self.values[:-1]))
        return self.values - previous

    @property
    def final_value(self) -> float:
        return float(self.values[-1]) if self.values.size else self.initial_value

    def integrate(self, a: float, b: float) -> float:
        return integrate_step(self, a, b)

    def with_defined_to(self, defined_to: float) -> "StepFunction":
        return StepFunction(
            self.jump_times,
            self.values,
            self.initial_value,
            left_continuous=self.left_continuous,
            defined_to=defined_to,
        )

    def __repr__(self):
        return (
            f"StepFunction(jumps={self.jump_times.size}, initial={self.initial_value:g}, "
            f"final={self.final_value:g})"
        )


def integrate_step(f: StepFunction, a: float, b: float) -> float:
    """Exact integral of a step function over ``[a, b]``."""
    if a > b:
        raise InvalidInputError(f"integration bounds reversed: a={a} > b={b}")
    if a == b:
        return 0.0
    jt = f.jump_times
    inner = jt[(jt > a) & (jt < b)]
    edges = np.concatenate(([a], inner, [b]))
    # value on the open segment (edges[i], edges[i+1]) is the right limit at its left edge
    heights = np.atleast_1d(f.right_limit(edges[:-1]))
    return math.fsum((heights * np.diff(edges)).tolist())


class EventTable(NamedTuple):
    """Per distinct observed time: events, censorings and the at-risk count."""

    times: np.ndarray
    events: np.ndarray
    censored: np.ndarray
    at_risk: np.ndarray
    size: int


def event_table(sample: Sample) -> EventTable:
    if len(sample) == 0:
        raise InvalidInputError("sample is empty")
    times, inverse = np.unique(sample.times, return_inverse=True)
    events = np.bincount(inverse, weights=sample.statuses, minlength=times.size)
    totals = np.bincount(inverse, minlength=times.size).astype(float)
    at_risk = np.cumsum(totals[::-1])[::-1]
    return EventTable(times, events, totals - events, at_risk, len(sample))


def counting_processes(sample: Sample) -> tuple[StepFunction, StepFunction]:
    """Counting process ``N`` (right-continuous) and at-risk process ``Y``.

    ``Y`` is left-continuous: ``Y(t)`` counts subjects with ``X_j >= t``.
    """
    tab = event_table(sample)
    n_cum = np.cumsum(tab.events)
    has_event = tab.events > 0
    N = StepFunction(tab.times[has_event], n_cum[has_event], 0.0)
    after = tab.at_risk - (tab.events + tab.censored)
    Y = StepFunction(tab.times, after, float(tab.size), left_continuous=True)
    return N, Y


def _km_defined_to(tab: EventTable, surv_final: float) -> float:
    if tab.events[-1] > 0 or surv_final == 0.0:
        return math.inf
    return float(tab.times[-1])


def kaplan_meier(sample: Sample) -> StepFunction:
    """Kaplan-Meier (product-limit) estimator of the survival function."""
    tab = event_table(sample)
    factors = 1.0 - tab.events / tab.at_risk
    surv = np.cumprod(factors)
    jump = tab.events > 0
    final = float(surv[-1])
    return StepFunction(tab.times[jump], surv[jump], 1.0, defined_to=_km_defined_to(tab, final))


def nelson_aalen(sample: Sample) -> StepFunction:
    """Nelson-Aalen estimator of the cumulative hazard."""
    tab = event_table(sample)
    jump = tab.events > 0
    increments = tab.events[jump] / tab.at_risk[jump]
    return StepFunction(tab.times[jump], np.cumsum(increments), 0.0)


def censoring_km(sample: Sample) -> StepFunction:
    """Product-limit estimator of the censoring survival function ``G``.

    Events at a tied time are removed from the risk set before censorings,
    i.e. the denominator is ``Y(t) - dN(t)``.
    """
    tab = event_table(sample)
    denom = tab.at_risk - tab.events
    with np.errstate(divide="ignore", invalid="ignore"):
        factors = np.where(tab.censored > 0, 1.0 - tab.censored / denom, 1.0)
    cens = np.cumprod(factors)
    jump = tab.censored > 0
    return StepFunction(tab.times[jump], cens[jump], 1.0)


@dataclass(frozen=True)
class EstimabilityReport:
    """Where the Kaplan-Meier curve of a sample is identified.

    ``estimable_to`` is infinite unless the largest observation is censored,
    in which case it is that largest time.
    """

    estimable_to: float
    tau: float
    fully_estimable_on_window: bool


def estimability(sample: Sample, tau: float) -> EstimabilityReport:
    if len(sample) == 0:
        raise InvalidInputError("sample is empty")
    if not tau > 0:
        raise InvalidInputError(f"tau must be positive, got {tau}")
    t_max = float(sample.times.max())
    event_at_max = bool(np.any(sample.statuses[sample.times == t_max] == 1))
    estimable_to = math.inf if event_at_max else t_max
    ok = event_at_max or t_max >= tau
    return EstimabilityReport(estimable_to, float(tau), ok)
