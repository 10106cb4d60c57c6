"""Two-sample RMST tests and confidence intervals.

Three procedures are provided, each for the difference ``mu1 - mu2`` and, on
the log scale, the ratio ``mu1 / mu2``:

* ``asymptotic``: normal approximation with the plug-in variance estimate;
* ``unstudentized-perm``: permutation test of ``|mu1_hat - mu2_hat|``, exact
  only when the two groups are exchangeable, and without a confidence interval;
* ``studentized-perm``: permutation test of the studentized statistic, whose
  permutation quantile also yields a confidence interval.

Permutations shuffle the group labels over the pooled ``(time, status)``
pairs. A permuted group whose largest observation is censored before ``tau``
gets its Kaplan-Meier curve extended horizontally to ``tau``.

Replicates are generated in fixed blocks of :data:`PERM_BLOCK`; block ``b``
draws from the substream ``SeedSequence(seed, spawn_key=(b,))``. Results are
therefore identical for any number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import DegenerateError, EstimabilityError, InvalidInputError
from .rmst import RmstEstimate, TimeWindow, _window, estimate_rmst, ratio_variance
from .survival import Observation, Sample, StepFunction, estimability

__all__ = [
    "METHODS",
    "ESTIMANDS",
    "PERM_BLOCK",
    "TestConfig",
    "PermutationDistribution",
    "InferenceResult",
    "permute_pairs",
    "horizontal_extension",
    "asymptotic_test",
    "asymptotic_from_estimates",
    "studentized_perm_test",
    "unstudentized_perm_test",
    "run_tests",
    "permutation_quantile_order",
]

METHODS = ("asymptotic", "studentized-perm", "unstudentized-perm")
ESTIMANDS = ("difference", "ratio")
PERM_BLOCK = 256


@dataclass(frozen=True)
class TestConfig:
    """Settings shared by all tests.

    ``seed`` is the root of the permutation substreams; ``workers`` is the
    number of threads used for the replicate blocks and never changes results.
    With ``check_pairs`` every replicate is verified to be a relabelling of the
    pooled pairs (slow; for debugging).
    """

    __test__ = False  # keep pytest from collecting this class

    alpha: float = 0.05
    n_perm: int = 2000
    seed: int = 0
    method: str = "studentized-perm"
    estimand: str = "difference"
    extension_policy: str = "horizontal"
    workers: int = 1
    check_pairs: bool = False

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InvalidInputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if int(self.n_perm) < 1:
            raise InvalidInputError(f"n_perm must be >= 1, got {self.n_perm}")
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.estimand not in ESTIMANDS:
            raise InvalidInputError(f"unknown estimand {self.estimand!r}; choose from {ESTIMANDS}")
        if self.extension_policy != "horizontal":
            raise InvalidInputError("only the 'horizontal' extension policy is supported")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInputError("seed must be an unsigned 64-bit integer")
        if int(self.workers) < 1:
            raise InvalidInputError("workers must be >= 1")


@dataclass(frozen=True)
class PermutationDistribution:
    """Replicate statistics and the permutation critical value.

    ``q_pi`` is the ``quantile_order``-th smallest replicate statistic, or
    ``inf`` when that order exceeds the number of replicates.
    """

    replicate_stats: np.ndarray = field(repr=False)
    quantile_order: int
    q_pi: float


@dataclass(frozen=True)
class InferenceResult:
    """Outcome of one test.

    ``point_estimate`` and the interval are on the estimand's scale (a ratio
    for ``estimand="ratio"``). ``ci_lower``/``ci_upper`` are ``None`` for the
    unstudentized permutation test. ``n_extended`` counts permutation
    replicates in which at least one group's curve was extended to ``tau``.
    """

    method: str
    estimand: str
    statistic: float
    p_value: float
    reject: bool
    point_estimate: float
    ci_lower: Optional[float]
    ci_upper: Optional[float]
    critical_value: float
    alpha: float
    n_perm: int = 0
    n_extended: int = 0
    distribution: Optional[PermutationDistribution] = field(default=None, repr=False, compare=False)

    def covers(self, value: float) -> Optional[bool]:
        if self.ci_lower is None:
            return None
        return self.ci_lower <= value <= self.ci_upper

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("distribution")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceResult":
        return cls(**{k: v for k, v in d.items() if k != "distribution"})


def permutation_quantile_order(alpha: float, n_perm: int) -> int:
    """``ceil((1 - alpha) * (n_perm + 1))`` in exact arithmetic."""
    a = Fraction(repr(float(alpha)))
    return math.ceil((1 - a) * (n_perm + 1))


def _as_pairs(pooled) -> list[tuple[float, int]]:
    if isinstance(pooled, Sample):
        return list(zip(pooled.times.tolist(), pooled.statuses.tolist()))
    out = []
    for item in pooled:
        if isinstance(item, Observation):
            out.append((item.time, item.status))
        else:
            t, d = item[:2]
            out.append((float(t), int(d)))
    return out


def permute_pairs(pooled, n1: int, rng: np.random.Generator) -> tuple[Sample, Sample]:
    """Randomly split pooled ``(time, status)`` pairs into groups of size
    ``n1`` and ``len(pooled) - n1``. Pairs are never broken up."""
    pairs = _as_pairs(pooled)
    if not 0 < n1 < len(pairs):
        raise InvalidInputError(f"n1 must lie strictly between 0 and {len(pairs)}")
    perm = rng.permutation(len(pairs))
    first = [pairs[i] for i in perm[:n1]]
    second = [pairs[i] for i in perm[n1:]]
    return (
        Sample([p[0] for p in first], [p[1] for p in first], 1),
        Sample([p[0] for p in second], [p[1] for p in second], 2),
    )


def horizontal_extension(km: StepFunction, tau: float) -> StepFunction:
    """Carry the last value of a Kaplan-Meier curve forward to ``tau``."""
    if km.defined_to >= tau:
        return km
    return km.with_defined_to(float(tau))


# --- vectorised permutation engine ----------------------------------------------


class _Pooled:
    """Pooled data sorted by time (events before censorings at ties).

    Group memberships are passed around as ``(B, n)`` 0/1 matrices over this
    sorted order; all replicates share the grid of distinct pooled times.
    """

    def __init__(self, sample1: Sample, sample2: Sample, tau: float):
        times = np.concatenate((sample1.times, sample2.times))
        status = np.concatenate((sample1.statuses, sample2.statuses)).astype(float)
        in1 = np.concatenate((np.ones(len(sample1)), np.zeros(len(sample2))))
        order = np.lexsort((-status, times))
        self.times = times[order]
        self.status = status[order]
        self.observed = in1[order]
        self.n1, self.n2 = len(sample1), len(sample2)
        self.n = self.n1 + self.n2
        self.tau = float(tau)
        uniq, first, counts = np.unique(self.times, return_index=True, return_counts=True)
        self.uniq = uniq
        self.first = first
        self.stop = first + counts
        edges = np.concatenate(([0.0], np.minimum(uniq, tau), [tau]))
        self.widths = np.diff(edges)
        self.in_window = uniq <= tau
        # Labels are shuffled for a canonically chosen group so that swapping
        # sample1/sample2 yields mirrored partitions under the same seed.
        key1, key2 = (len(sample1), sample1.pairs()), (len(sample2), sample2.pairs())
        self.canonical_is_first = key1 <= key2
        n_c = self.n1 if self.canonical_is_first else self.n2
        self.canonical_base = np.concatenate((np.ones(n_c), np.zeros(self.n - n_c)))

    def group_stats(self, member: np.ndarray):
        """RMST, variance estimate and extension flag for each row of ``member``."""
        rows = member.shape[0]
        events = member * self.status
        at_risk = np.cumsum(member[:, ::-1], axis=1)[:, ::-1][:, self.first]
        cum_events = np.concatenate((np.zeros((rows, 1)), np.cumsum(events, axis=1)), axis=1)
        d_events = cum_events[:, self.stop] - cum_events[:, self.first]
        with np.errstate(divide="ignore", invalid="ignore"):
            hazard = np.where(at_risk > 0, d_events / at_risk, 0.0)
        surv = np.cumprod(1.0 - hazard, axis=1)
        heights = np.concatenate((np.ones((rows, 1)), surv), axis=1)
        tail = np.cumsum((heights * self.widths)[:, ::-1], axis=1)[:, ::-1]
        mu = tail[:, 0]
        weight = tail[:, 1:]
        denom = at_risk * (at_risk - d_events)
        use = (d_events > 0) & (denom > 0) & self.in_window
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(use, weight * weight * d_events / np.where(use, denom, 1.0), 0.0)
        sigma2 = self.n * terms.sum(axis=1)
        last = (at_risk > 0).sum(axis=1) - 1
        r = np.arange(rows)
        extended = (self.uniq[last] < self.tau) & (d_events[r, last] == 0)
        return mu, sigma2, extended

    def statistics(self, member1: np.ndarray) -> dict:
        mu1, s1, ext1 = self.group_stats(member1)
        mu2, s2, ext2 = self.group_stats(1.0 - member1)
        root_n = math.sqrt(self.n)
        diff = mu1 - mu2
        with np.errstate(divide="ignore", invalid="ignore"):
            log_ratio = np.where((mu1 > 0) & (mu2 > 0), np.log(mu1) - np.log(mu2), np.nan)
            var_rat = s1 / mu1**2 + s2 / mu2**2
        return {
            "mu1": mu1,
            "mu2": mu2,
            "sigma2_1": s1,
            "sigma2_2": s2,
            "extended": ext1 | ext2,
            "unstudentized-perm/difference": np.abs(diff),
            "studentized-perm/difference": _studentize(root_n * np.abs(diff), s1 + s2),
            "unstudentized-perm/ratio": np.where(np.isnan(log_ratio), np.inf, np.abs(log_ratio)),
            "studentized-perm/ratio": np.where(
                np.isnan(log_ratio), np.inf, _studentize(root_n * np.abs(np.nan_to_num(log_ratio)), var_rat)
            ),
        }

    def replicate_block(self, seed: int, block: int, size: int, check_pairs: bool) -> dict:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))
        shuffled = rng.permuted(np.tile(self.canonical_base, (size, 1)), axis=1)
        member1 = shuffled if self.canonical_is_first else 1.0 - shuffled
        if check_pairs:
            self._check_pairs(member1)
        return self.statistics(member1)

    def _check_pairs(self, member1):
        pooled = sorted(zip(self.times.tolist(), self.status.tolist()))
        for row in member1:
            if int(row.sum()) != self.n1 or not np.all((row == 0) | (row == 1)):
                raise RuntimeError("permutation replicate has wrong group sizes")
            g1 = [(t, s) for t, s, m in zip(self.times, self.status, row) if m == 1]
            g2 = [(t, s) for t, s, m in zip(self.times, self.status, row) if m == 0]
            if sorted(g1 + g2) != pooled:
                raise RuntimeError("permutation replicate broke (time, status) pairs")


def _studentize(numerator, variance):
    variance = np.asarray(variance, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = numerator / np.sqrt(variance)
    degenerate = ~(variance > 0)
    # zero spread: statistic 0 if the numerator also vanishes, +inf otherwise
    return np.where(degenerate, np.where(numerator == 0, 0.0, np.inf), out)


@dataclass
class _PermutationRun:
    pooled: _Pooled
    observed: dict
    replicates: dict
    n_perm: int


def _run_permutations(sample1, sample2, tau, n_perm, seed, workers=1, check_pairs=False) -> _PermutationRun:
    pooled = _Pooled(sample1, sample2, tau)
    observed = {k: v[0] for k, v in pooled.statistics(pooled.observed[None, :]).items()}
    sizes = [min(PERM_BLOCK, n_perm - start) for start in range(0, n_perm, PERM_BLOCK)]

    def job(block):
        return pooled.replicate_block(int(seed), block, sizes[block], check_pairs)

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(job, range(len(sizes))))
    else:
        parts = [job(b) for b in range(len(sizes))]
    replicates = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    return _PermutationRun(pooled, observed, replicates, n_perm)


def _check_inputs(sample1: Sample, sample2: Sample, tau: float):
    for s in (sample1, sample2):
        if len(s) < 2:
            raise InvalidInputError(f"group {s.group} has {len(s)} subject(s); need at least 2")
        report = estimability(s, tau)
        if not report.fully_estimable_on_window:
            raise EstimabilityError(
                f"Kaplan-Meier curve of group {s.group} is only estimable up to "
                f"t={report.estimable_to:g} (largest observation censored) but tau={tau:g}; "
                "choose a smaller tau"
            )


def _perm_result(run: _PermutationRun, method: str, estimand: str, alpha: float) -> InferenceResult:
    obs = run.observed
    key = f"{method}/{estimand}"
    reps = run.replicates[key]
    t_obs = float(obs[key])
    n = run.pooled.n
    k = permutation_quantile_order(alpha, run.n_perm)
    q = float(np.sort(reps)[k - 1]) if k <= run.n_perm else math.inf
    p_value = (1 + int(np.count_nonzero(reps >= t_obs))) / (run.n_perm + 1)
    dist = PermutationDistribution(reps, k, q)
    mu1, mu2 = float(obs["mu1"]), float(obs["mu2"])
    sigma2 = float(obs["sigma2_1"] + obs["sigma2_2"])
    studentized = method == "studentized-perm"

    if estimand == "difference":
        point = mu1 - mu2
        if studentized:
            if not sigma2 > 0:
                raise DegenerateError("variance estimate of mu1 - mu2 is zero")
            half = math.sqrt(sigma2 / n) * q
            lo, hi = point - half, point + half
        else:
            lo = hi = None
    else:
        if not (mu1 > 0 and mu2 > 0):
            raise DegenerateError("log ratio undefined: an RMST estimate is zero")
        point = mu1 / mu2
        if studentized:
            var_rat = float(obs["sigma2_1"] / mu1**2 + obs["sigma2_2"] / mu2**2)
            if not var_rat > 0:
                raise DegenerateError("variance estimate of log(mu1 / mu2) is zero")
            half = math.sqrt(var_rat / n) * q
            log_point = math.log(mu1) - math.log(mu2)
            lo, hi = math.exp(log_point - half), math.exp(log_point + half)
        else:
            lo = hi = None

    if estimand == "ratio" and lo is not None:
        reject = not (lo <= 1.0 <= hi)
    else:
        reject = t_obs > q
    return InferenceResult(
        method=method,
        estimand=estimand,
        statistic=t_obs,
        p_value=p_value,
        reject=bool(reject),
        point_estimate=point,
        ci_lower=lo,
        ci_upper=hi,
        critical_value=q,
        alpha=alpha,
        n_perm=run.n_perm,
        n_extended=int(np.count_nonzero(run.replicates["extended"])),
        distribution=dist,
    )


def asymptotic_from_estimates(
    est1: RmstEstimate, est2: RmstEstimate, alpha: float = 0.05, estimand: str = "difference"
) -> InferenceResult:
    """Normal-approximation test and interval from two group estimates."""
    n = est1.total_size
    z = float(stats.norm.ppf(1 - alpha / 2))
    if estimand == "difference":
        point = est1.mu_hat - est2.mu_hat
        sigma = math.sqrt(est1.sigma2_hat + est2.sigma2_hat)
        if sigma == 0:
            raise DegenerateError("variance estimate of mu1 - mu2 is zero")
        t = math.sqrt(n) * point / sigma
        half = sigma * z / math.sqrt(n)
        lo, hi = point - half, point + half
        reject = abs(t) > z
    elif estimand == "ratio":
        sigma = math.sqrt(ratio_variance(est1, est2))
        if sigma == 0:
            raise DegenerateError("variance estimate of log(mu1 / mu2) is zero")
        log_point = math.log(est1.mu_hat) - math.log(est2.mu_hat)
        point = est1.mu_hat / est2.mu_hat
        t = math.sqrt(n) * log_point / sigma
        half = sigma * z / math.sqrt(n)
        lo, hi = math.exp(log_point - half), math.exp(log_point + half)
        reject = not (lo <= 1.0 <= hi)
    else:
        raise InvalidInputError(f"unknown estimand {estimand!r}")
    return InferenceResult(
        method="asymptotic",
        estimand=estimand,
        statistic=t,
        p_value=float(2 * stats.norm.sf(abs(t))),
        reject=bool(reject),
        point_estimate=point,
        ci_lower=lo,
        ci_upper=hi,
        critical_value=z,
        alpha=alpha,
    )


def asymptotic_test(sample1: Sample, sample2: Sample, window, config: TestConfig = TestConfig()) -> InferenceResult:
    tau = _window(window).tau
    _check_inputs(sample1, sample2, tau)
    n = len(sample1) + len(sample2)
    est1 = estimate_rmst(sample1, tau, n)
    est2 = estimate_rmst(sample2, tau, n)
    return asymptotic_from_estimates(est1, est2, config.alpha, config.estimand)


def _perm_test(method, sample1, sample2, window, config):
    tau = _window(window).tau
    _check_inputs(sample1, sample2, tau)
    run = _run_permutations(
        sample1, sample2, tau, int(config.n_perm), int(config.seed), int(config.workers), config.check_pairs
    )
    return _perm_result(run, method, config.estimand, config.alpha)


def studentized_perm_test(sample1: Sample, sample2: Sample, window, config: TestConfig = TestConfig()) -> InferenceResult:
    return _perm_test("studentized-perm", sample1, sample2, window, config)


def unstudentized_perm_test(sample1: Sample, sample2: Sample, window, config: TestConfig = TestConfig()) -> InferenceResult:
    return _perm_test("unstudentized-perm", sample1, sample2, window, config)


def run_tests(
    sample1: Sample,
    sample2: Sample,
    window,
    config: TestConfig = TestConfig(),
    methods: Sequence[str] = METHODS,
    estimands: Sequence[str] = ("difference",),
) -> list[InferenceResult]:
    """Run several methods/estimands on one dataset.

    Both permutation methods share the same replicates. ``config.method`` and
    ``config.estimand`` are ignored in favour of ``methods``/``estimands``.
    """
    tau = _window(window).tau
    for m in methods:
        if m not in METHODS:
            raise InvalidInputError(f"unknown method {m!r}")
    for e in estimands:
        if e not in ESTIMANDS:
            raise InvalidInputError(f"unknown estimand {e!r}")
    _check_inputs(sample1, sample2, tau)
    results = []
    run = None
    if any(m != "asymptotic" for m in methods):
        run = _run_permutations(
            sample1, sample2, tau, int(config.n_perm), int(config.seed), int(config.workers), config.check_pairs
        )
    est = None
    for m in methods:
        for e in estimands:
            if m == "asymptotic":
                if est is None:
                    n = len(sample1) + len(sample2)
                    est = (estimate_rmst(sample1, tau, n), estimate_rmst(sample2, tau, n))
                results.append(asymptotic_from_estimates(*est, config.alpha, e))
            else:
                results.append(_perm_result(run, m, e, config.alpha))
    return results
