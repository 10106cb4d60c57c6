"""Restricted mean survival time: estimates, variance estimates and true values.

The estimators work on :class:`~rmstperm.survival.Sample` objects. The
``true_*`` functions compute the population quantities the estimators converge
to, from known survival and censoring laws, by numerical integration; they are
used as oracles by the test-suite and the simulation harness.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .errors import DegenerateError, EstimabilityError, InvalidInputError, ModelError
from .survival import Sample, StepFunction, estimability, event_table, integrate_step, kaplan_meier

__all__ = [
    "TimeWindow",
    "RmstEstimate",
    "TheoreticalModel",
    "rmst",
    "rmst_variance",
    "estimate_rmst",
    "ratio_variance",
    "true_rmst",
    "true_sigma",
    "true_sigma_perm",
]

QUAD_TOL = 1e-11


@dataclass(frozen=True)
class TimeWindow:
    """Restriction window ``[0, tau]``."""

    tau: float

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise InvalidInputError(f"tau must be positive and finite, got {self.tau!r}")


def _window(window) -> TimeWindow:
    return window if isinstance(window, TimeWindow) else TimeWindow(float(window))


@dataclass(frozen=True)
class RmstEstimate:
    """Estimated RMST of one group and the estimate of its asymptotic variance.

    ``sigma2_hat`` estimates the variance of ``sqrt(n) * (mu_hat - mu)`` where
    ``n = total_size`` counts both groups.
    """

    mu_hat: float
    sigma2_hat: float
    group_size: int
    total_size: int


def _check_estimable(sample: Sample, tau: float):
    report = estimability(sample, tau)
    if not report.fully_estimable_on_window:
        raise EstimabilityError(
            f"Kaplan-Meier curve of group {sample.group} is only estimable up to "
            f"t={report.estimable_to:g} (largest observation censored) but tau={tau:g}; "
            "choose a smaller tau"
        )


def rmst(km: StepFunction, window) -> float:
    """Area under a Kaplan-Meier curve over ``[0, tau]``.

    Raises :class:`EstimabilityError` if the curve is only identified up to a
    time before ``tau`` and has not been extended (see
    :func:`rmstperm.inference.horizontal_extension`).
    """
    tau = _window(window).tau
    if km.defined_to < tau:
        raise EstimabilityError(
            f"curve is only estimable up to t={km.defined_to:g} < tau={tau:g}"
        )
    return integrate_step(km, 0.0, tau)


def rmst_variance(sample: Sample, window, total_size: Optional[int] = None, *, extend: bool = False) -> float:
    """Plug-in estimate of the asymptotic variance of ``sqrt(n) * mu_hat``.

    Sums ``n * w(x)**2 * dN(x) / (Y(x) * (Y(x) - dN(x)))`` over event times
    ``x <= tau``, with ``w(x)`` the area under the Kaplan-Meier curve on
    ``[x, tau]``. This is the Nelson-Aalen/Kaplan-Meier plug-in with
    ``S(x-) G(x-)`` replaced by ``Y(x) / n_i``. A time at which every subject
    at risk fails contributes zero (its weight ``w`` vanishes).
    """
    tau = _window(window).tau
    if not extend:
        _check_estimable(sample, tau)
    n = len(sample) if total_size is None else int(total_size)
    if n < len(sample):
        raise InvalidInputError("total_size must be at least the group size")
    km = kaplan_meier(sample)
    tab = event_table(sample)
    terms = []
    for x, d, y in zip(tab.times, tab.events, tab.at_risk):
        if d == 0 or x > tau or y == d:
            continue
        w = integrate_step(km, x, tau)
        terms.append(n * w * w * d / (y * (y - d)))
    return math.fsum(terms)


def estimate_rmst(sample: Sample, window, total_size: Optional[int] = None, *, extend: bool = False) -> RmstEstimate:
    tau = _window(window).tau
    if not extend:
        _check_estimable(sample, tau)
    km = kaplan_meier(sample)
    if extend:
        km = km.with_defined_to(math.inf)
    n = len(sample) if total_size is None else int(total_size)
    return RmstEstimate(
        mu_hat=rmst(km, tau),
        sigma2_hat=rmst_variance(sample, tau, n, extend=True),
        group_size=len(sample),
        total_size=n,
    )


def ratio_variance(est1: RmstEstimate, est2: RmstEstimate) -> float:
    """Variance estimate of ``sqrt(n) * log(mu1_hat / mu2_hat)`` (delta method)."""
    if est1.mu_hat <= 0 or est2.mu_hat <= 0:
        raise DegenerateError("log ratio undefined: an RMST estimate is zero")
    return est1.sigma2_hat / est1.mu_hat**2 + est2.sigma2_hat / est2.mu_hat**2


# --- theoretical quantities ---------------------------------------------------


@dataclass(frozen=True)
class TheoreticalModel:
    """Known event-time and censoring laws of one group.

    Parameters
    ----------
    survival, censoring_survival : callable
        Right-continuous survival functions ``S(t) = P(T > t)`` and
        ``G(t) = P(C > t)``.
    hazard : callable
        Hazard rate of the absolutely continuous part of ``T``.
    atoms : sequence of float
        Times where ``S`` jumps. Left limits are taken numerically at these
        points; elsewhere ``S`` and ``G`` are assumed continuous.
    censoring_atoms : sequence of float
        Times where ``G`` jumps.
    breakpoints : sequence of float
        Points where the hazard is discontinuous or singular; quadrature
        intervals are split there.
    rmst_closed_form : callable, optional
        ``tau -> mu``; used by :func:`true_rmst` instead of quadrature.
    """

    survival: Callable[[float], float]
    censoring_survival: Callable[[float], float]
    hazard: Callable[[float], float]
    atoms: Sequence[float] = ()
    censoring_atoms: Sequence[float] = ()
    breakpoints: Sequence[float] = ()
    rmst_closed_form: Optional[Callable[[float], float]] = field(default=None, compare=False)

    @classmethod
    def from_distributions(cls, event, censoring) -> "TheoreticalModel":
        """Build a model from two continuous distributions exposing ``sf``,
        ``hazard``, ``breakpoints`` and ``rmst`` (see :mod:`rmstperm.distributions`)."""
        return cls(
            survival=event.sf,
            censoring_survival=censoring.sf,
            hazard=event.hazard,
            breakpoints=tuple(sorted(set(event.breakpoints) | set(censoring.breakpoints))),
            rmst_closed_form=getattr(event, "rmst", None),
        )

    def survival_left(self, t: float) -> float:
        return self._left(self.survival, self.atoms, t)

    def censoring_left(self, t: float) -> float:
        return self._left(self.censoring_survival, self.censoring_atoms, t)

    @staticmethod
    def _left(fn, atoms, t):
        if t in atoms:
            eps = max(abs(t), 1.0) * 1e-12
            return float(fn(max(t - eps, 0.0))) if t > 0 else 1.0
        return float(fn(t))

    def hazard_jump(self, t: float) -> float:
        """Jump ``dA(t)`` of the cumulative hazard at an atom."""
        left = self.survival_left(t)
        if left <= 0:
            return 0.0
        return (left - float(self.survival(t))) / left


def _finite(fn):
    def wrapped(t):
        v = float(fn(t))
        if not math.isfinite(v):
            raise ModelError(f"model function returned {v!r} at t={t!r}")
        return v

    return wrapped


def _segments(tau, *point_sets):
    pts = sorted({p for ps in point_sets for p in ps if 0 < p < tau})
    edges = [0.0, *pts, tau]
    return list(zip(edges[:-1], edges[1:]))


def _quad(fn, a, b):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(fn, a, b, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)
    return val


def _quad_rmst(model: TheoreticalModel, a: float, b: float) -> float:
    sf = _finite(model.survival)
    parts = [
        _quad(sf, max(lo, a), hi)
        for lo, hi in _segments(b, model.breakpoints, model.atoms)
        if hi > a
    ]
    return math.fsum(parts)


def true_rmst(model: TheoreticalModel, window, *, closed_form: bool = True) -> float:
    """``mu = integral of S over [0, tau]``, by closed form when available."""
    tau = _window(window).tau
    if closed_form and model.rmst_closed_form is not None:
        value = float(model.rmst_closed_form(tau))
        if not math.isfinite(value):
            raise ModelError(f"closed-form RMST is {value!r}")
        return value
    return _quad_rmst(model, 0.0, tau)


def true_sigma(model: TheoreticalModel, kappa: float, window) -> float:
    """Asymptotic variance of ``sqrt(n) * (mu_hat - mu)`` for one group.

    ``kappa`` is the limiting fraction ``n_i / n`` of the group.
    """
    tau = _window(window).tau
    if not 0 < kappa <= 1:
        raise InvalidInputError(f"kappa must lie in (0, 1], got {kappa}")
    sf = _finite(model.survival)
    gf = _finite(model.censoring_survival)
    hz = _finite(model.hazard)

    def remaining_area(x):
        return _quad_rmst(model, x, tau)

    def integrand(x):
        h = hz(x)
        if h == 0.0:
            return 0.0
        denom = gf(x) * sf(x)
        if denom <= 0.0:
            raise ModelError(
                f"S(x-) G(x-) = 0 at x={x:g} inside [0, tau]; need P(X >= tau) > 0"
            )
        w = remaining_area(x)
        return w * w * h / denom

    total = math.fsum(
        _quad(integrand, lo, hi) for lo, hi in _segments(tau, model.breakpoints, model.atoms, model.censoring_atoms)
    )
    for a in model.atoms:
        if not 0 <= a <= tau:
            continue
        dA = model.hazard_jump(a)
        if dA == 0.0 or dA >= 1.0:
            continue
        denom = model.censoring_left(a) * model.survival_left(a)
        if denom <= 0.0:
            raise ModelError(f"S(x-) G(x-) = 0 at atom x={a:g}")
        w = remaining_area(a)
        total += w * w * dA / ((1.0 - dA) * denom)
    return total / kappa


def true_sigma_perm(model1: TheoreticalModel, model2: TheoreticalModel, kappa1: float, window) -> float:
    """Limiting variance of the permuted, unstudentized ``sqrt(n) * (mu1 - mu2)``.

    Built from the pooled limits ``y = k1 S1 G1 + k2 S2 G2``,
    ``dnu = k1 G1 dF1 + k2 G2 dF2``, ``dA = dnu / y`` and ``S = exp(-A)``.
    Only continuous laws are supported. The nested integrals are turned into a
    single ODE system (cumulative hazard, cumulative area and three moment
    integrals) solved with a high-order adaptive Runge-Kutta scheme.
    """
    tau = _window(window).tau
    if not 0 < kappa1 < 1:
        raise InvalidInputError(f"kappa1 must lie in (0, 1), got {kappa1}")
    if model1.atoms or model2.atoms or model1.censoring_atoms or model2.censoring_atoms:
        raise ModelError("pooled permutation variance requires continuous laws")
    k1, k2 = kappa1, 1.0 - kappa1
    s1, s2 = _finite(model1.survival), _finite(model2.survival)
    g1, g2 = _finite(model1.censoring_survival), _finite(model2.censoring_survival)
    h1, h2 = _finite(model1.hazard), _finite(model2.hazard)

    def rates(t, A, I):
        S1, S2, G1, G2 = s1(t), s2(t), g1(t), g2(t)
        y = k1 * S1 * G1 + k2 * S2 * G2
        dnu = k1 * G1 * S1 * h1(t) + k2 * G2 * S2 * h2(t)
        if y <= 0.0:
            if dnu > 0.0:
                raise ModelError(f"pooled at-risk limit y vanishes at t={t:g} < tau")
            return np.zeros(5)
        a = dnu / y
        g = a / y
        return np.array([a, math.exp(-A), g, I * g, I * I * g])

    segments = _segments(tau, model1.breakpoints, model2.breakpoints)
    state = np.zeros(5)
    for idx, (lo, hi) in enumerate(segments):
        if idx == 0:
            # t = hi * v**4 tames hazards that are singular at the origin
            def rhs(v, z, hi=hi):
                jac = 4.0 * hi * v**3
                if jac == 0.0:
                    return np.zeros(5)
                return rates(hi * v**4, z[0], z[1]) * jac

            span = (0.0, 1.0)
        else:
            def rhs(t, z):
                return rates(t, z[0], z[1])

            span = (lo, hi)
        sol = integrate.solve_ivp(rhs, span, state, method="DOP853", rtol=1e-12, atol=1e-14)
        if not sol.success:
            raise ModelError(f"ODE integration failed: {sol.message}")
        state = sol.y[:, -1]
    _, area, j0, j1, j2 = state
    core = area * area * j0 - 2.0 * area * j1 + j2
    return max(core, 0.0) / (k1 * k2)
