"""Monte Carlo study of rejection rates and confidence-interval coverage.

Every grid cell gets a key derived from its label, and replication ``r`` of a
cell draws its dataset from ``SeedSequence(root, spawn_key=(key, r, 0))`` and
its permutation seed from ``SeedSequence(root, spawn_key=(key, r, 1))``.
Results therefore do not depend on the number of workers, on the order of the
cells, or on which other cells are in the grid.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, RmstError
from .inference import ESTIMANDS, METHODS, TestConfig, run_tests
from .scenarios import (
    CENSORING_SCENARIOS,
    MAX_REGENERATIONS,
    SURVIVAL_SCENARIOS,
    ScenarioSpec,
    generate_dataset,
    true_values,
)

__all__ = [
    "SimConfig",
    "SimRow",
    "SimResult",
    "binomial_band",
    "cell_key",
    "replication_streams",
    "run_cell",
    "run_study",
    "load_config",
    "config_from_dict",
    "write_tsv",
    "write_json",
    "format_summary",
]

CHUNK = 50


@dataclass(frozen=True)
class SimConfig:
    cells: tuple[ScenarioSpec, ...]
    n_sim: int = 5000
    n_perm: int = 2000
    alpha: float = 0.05
    methods: tuple[str, ...] = METHODS
    estimands: tuple[str, ...] = ("difference",)
    root_seed: int = 0
    workers: int = 1
    max_regenerations: int = MAX_REGENERATIONS

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "estimands", tuple(self.estimands))
        if int(self.n_sim) < 1:
            raise ConfigError("n_sim must be >= 1", path="n_sim")
        if int(self.n_perm) < 1:
            raise ConfigError("n_perm must be >= 1", path="n_perm")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)", path="alpha")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}", path="methods")
        for e in self.estimands:
            if e not in ESTIMANDS:
                raise ConfigError(f"unknown estimand {e!r}", path="estimands")
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1", path="workers")
        if not 0 <= int(self.root_seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer", path="seed")


@dataclass(frozen=True)
class SimRow:
    """Aggregate over ``n_sim`` replications of one (cell, method, estimand).

    Rates are fractions. ``coverage``/``mean_width`` are ``None`` for the
    unstudentized test, which has no interval, and for failed cells.
    """

    scenario: str
    censoring: str
    n1: int
    n2: int
    K: int
    delta: float
    method: str
    estimand: str
    n_sim: int
    rejection_rate: Optional[float]
    mc_se: Optional[float]
    coverage: Optional[float]
    coverage_se: Optional[float]
    mean_width: Optional[float]
    regenerations: int
    error: str = ""

    def in_band(self, band: tuple[float, float], value: Optional[float]) -> bool:
        return value is not None and band[0] <= 100 * value <= band[1]


@dataclass
class SimResult:
    config: SimConfig
    rows: list[SimRow]
    wall_clock: float = field(default=0.0, compare=False)

    def select(self, **match) -> list[SimRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]

    def row(self, **match) -> SimRow:
        found = self.select(**match)
        if len(found) != 1:
            raise KeyError(f"{len(found)} rows match {match}")
        return found[0]


def binomial_band(alpha_nominal: float, n_sim: int) -> tuple[float, float]:
    """Normal-approximation 95% band for a Monte Carlo rate, in percent."""
    if n_sim < 1:
        raise ValueError("n_sim must be >= 1")
    half = 1.96 * math.sqrt(alpha_nominal * (1 - alpha_nominal) / n_sim)
    return 100 * (alpha_nominal - half), 100 * (alpha_nominal + half)


def cell_key(scenario: ScenarioSpec) -> int:
    return zlib.crc32(scenario.label.encode())


def replication_streams(root_seed: int, scenario: ScenarioSpec, rep: int) -> tuple[np.random.Generator, int]:
    """Dataset generator and permutation seed of one replication."""
    key = cell_key(scenario)
    data = np.random.Generator(np.random.PCG64(np.random.SeedSequence(root_seed, spawn_key=(key, rep, 0))))
    perm_seed = int(np.random.SeedSequence(root_seed, spawn_key=(key, rep, 1)).generate_state(1, np.uint64)[0])
    return data, perm_seed


def _targets(scenario: ScenarioSpec) -> dict:
    mu1, mu2 = true_values(scenario)
    return {"difference": mu1 - mu2, "ratio": mu1 / mu2}


def _replications(args):
    scenario, config, start, stop, targets = args
    combos = [(m, e) for m in config.methods for e in config.estimands]
    reject = np.zeros((stop - start, len(combos)), dtype=bool)
    covered = np.zeros_like(reject)
    width = np.full(reject.shape, np.nan)
    regen = 0
    for i, rep in enumerate(range(start, stop)):
        rng, perm_seed = replication_streams(config.root_seed, scenario, rep)
        ds = generate_dataset(scenario, rng, config.max_regenerations)
        regen += ds.regenerations
        test_config = TestConfig(alpha=config.alpha, n_perm=config.n_perm, seed=perm_seed)
        results = run_tests(ds.sample1, ds.sample2, scenario.tau, test_config, config.methods, config.estimands)
        for j, res in enumerate(results):
            reject[i, j] = res.reject
            if res.ci_lower is not None:
                covered[i, j] = res.ci_lower <= targets[res.estimand] <= res.ci_upper
                width[i, j] = res.ci_upper - res.ci_lower
    return reject, covered, width, regen


def _rate(hits: np.ndarray):
    p = float(hits.mean())
    return p, math.sqrt(p * (1 - p) / hits.size)


def run_cell(scenario: ScenarioSpec, config: SimConfig, pool: Optional[ProcessPoolExecutor] = None) -> list[SimRow]:
    """Simulate one grid cell; failures become rows carrying the error text."""
    combos = [(m, e) for m in config.methods for e in config.estimands]
    base = dict(
        scenario=scenario.survival,
        censoring=scenario.censoring,
        n1=scenario.n1,
        n2=scenario.n2,
        K=scenario.k,
        delta=scenario.delta,
        n_sim=int(config.n_sim),
    )
    if not combos:
        return []
    try:
        targets = _targets(scenario)
        jobs = [
            (scenario, config, s, min(s + CHUNK, config.n_sim), targets)
            for s in range(0, int(config.n_sim), CHUNK)
        ]
        parts = list(pool.map(_replications, jobs)) if pool is not None else [_replications(j) for j in jobs]
    except RmstError as exc:
        return [
            SimRow(**base, method=m, estimand=e, rejection_rate=None, mc_se=None, coverage=None,
                   coverage_se=None, mean_width=None, regenerations=0, error=f"{type(exc).__name__}: {exc}")
            for m, e in combos
        ]
    reject = np.concatenate([p[0] for p in parts])
    covered = np.concatenate([p[1] for p in parts])
    width = np.concatenate([p[2] for p in parts])
    regen = sum(p[3] for p in parts)
    rows = []
    for j, (m, e) in enumerate(combos):
        rate, se = _rate(reject[:, j])
        has_ci = m != "unstudentized-perm"
        cov, cov_se = _rate(covered[:, j]) if has_ci else (None, None)
        rows.append(
            SimRow(
                **base,
                method=m,
                estimand=e,
                rejection_rate=rate,
                mc_se=se,
                coverage=cov,
                coverage_se=cov_se,
                mean_width=float(width[:, j].mean()) if has_ci else None,
                regenerations=int(regen),
            )
        )
    return rows


def run_study(config: SimConfig) -> SimResult:
    """Run every cell of ``config``; deterministic given ``config.root_seed``."""
    start = time.perf_counter()
    rows: list[SimRow] = []
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=int(config.workers)) as pool:
            for cell in config.cells:
                rows.extend(run_cell(cell, config, pool))
    else:
        for cell in config.cells:
            rows.extend(run_cell(cell, config))
    return SimResult(config, rows, time.perf_counter() - start)


# --- declarative grid configs ------------------------------------------------------

_KEYS = {
    "survival", "censoring", "sizes", "K", "delta", "tau", "n_sim", "n_perm", "B",
    "alpha", "methods", "estimands", "seed", "workers", "max_regenerations",
}


def _list(raw, key, default):
    value = raw.get(key, default)
    if not isinstance(value, list) or not value:
        raise ConfigError("must be a non-empty list", path=key)
    return value


def _int(raw, key, default, minimum=1):
    value = raw.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"must be an integer, got {value!r}", path=key)
    if value < minimum:
        raise ConfigError(f"must be >= {minimum}, got {value}", path=key)
    return value


def config_from_dict(raw: dict, *, workers: Optional[int] = None) -> SimConfig:
    """Build a :class:`SimConfig` from a parsed grid description.

    Keys: ``survival``, ``censoring`` (scenario names), ``sizes`` (list of
    ``[n1, n2]``), ``K`` (size multipliers), ``delta``, ``tau``, ``n_sim``,
    ``n_perm`` (alias ``B``), ``alpha``, ``methods``, ``estimands``, ``seed``.
    S2 at ``delta = 0`` is dropped when S1 is also requested, since the two
    scenarios then coincide.
    """
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", path="$")
    unknown = sorted(set(raw) - _KEYS)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}", path="$")
    survival = _list(raw, "survival", None)
    censoring = _list(raw, "censoring", None)
    for i, s in enumerate(survival):
        if s not in SURVIVAL_SCENARIOS:
            raise ConfigError(f"unknown survival scenario {s!r}", path=f"survival[{i}]")
    for i, c in enumerate(censoring):
        if c not in CENSORING_SCENARIOS:
            raise ConfigError(f"unknown censoring scenario {c!r}", path=f"censoring[{i}]")
    sizes = _list(raw, "sizes", [[20, 20]])
    for i, pair in enumerate(sizes):
        if (
            not isinstance(pair, list)
            or len(pair) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 2 for v in pair)
        ):
            raise ConfigError("must be a pair of integers >= 2", path=f"sizes[{i}]")
    ks = _list(raw, "K", [1])
    for i, k in enumerate(ks):
        if isinstance(k, bool) or not isinstance(k, int) or k < 1:
            raise ConfigError("must be a positive integer", path=f"K[{i}]")
    deltas = _list(raw, "delta", [0.0])
    for i, d in enumerate(deltas):
        if isinstance(d, bool) or not isinstance(d, (int, float)) or not (d >= 0 and math.isfinite(d)):
            raise ConfigError("must be a finite number >= 0", path=f"delta[{i}]")
    tau = raw.get("tau", 10.0)
    if isinstance(tau, bool) or not isinstance(tau, (int, float)) or not tau > 0:
        raise ConfigError("must be a positive number", path="tau")
    if "B" in raw and "n_perm" in raw:
        raise ConfigError("give either B or n_perm, not both", path="B")
    n_perm = _int(raw, "B" if "B" in raw else "n_perm", 2000)
    n_sim = _int(raw, "n_sim", 5000)
    seed = _int(raw, "seed", 0, minimum=0)
    alpha = raw.get("alpha", 0.05)
    if isinstance(alpha, bool) or not isinstance(alpha, (int, float)) or not 0 < alpha < 1:
        raise ConfigError("must lie in (0, 1)", path="alpha")
    methods = _list(raw, "methods", list(METHODS))
    estimands = _list(raw, "estimands", ["difference"])
    n_workers = workers if workers is not None else _int(raw, "workers", 1)
    max_regen = _int(raw, "max_regenerations", MAX_REGENERATIONS, minimum=0)

    cells = []
    for s in survival:
        for c in censoring:
            for d in deltas:
                if s == "S2" and d == 0 and "S1" in survival:
                    continue
                for k in ks:
                    for n1, n2 in sizes:
                        cells.append(ScenarioSpec(s, c, float(d), n1 * k, n2 * k, float(tau), k))
    return SimConfig(
        cells=tuple(cells),
        n_sim=n_sim,
        n_perm=n_perm,
        alpha=float(alpha),
        methods=tuple(methods),
        estimands=tuple(estimands),
        root_seed=seed,
        workers=n_workers,
        max_regenerations=max_regen,
    )


def load_config(path: str, *, workers: Optional[int] = None) -> SimConfig:
    """Read a JSON grid description (see :func:`config_from_dict`)."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}", path=str(path)) from exc
    return config_from_dict(raw, workers=workers)


# --- output --------------------------------------------------------------------------

COLUMNS = [
    "scenario", "censoring", "n1", "n2", "K", "delta", "method", "estimand", "n_sim",
    "rejection_rate", "mc_se", "coverage", "coverage_se", "mean_width", "regenerations", "error",
]


def _cell(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_tsv(result: SimResult, stream) -> None:
    writer = csv.writer(stream, delimiter="\t", lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in result.rows:
        writer.writerow([_cell(getattr(row, c)) for c in COLUMNS])


def _config_dict(config: SimConfig) -> dict:
    d = asdict(config)
    d.pop("workers")  # never changes results, so kept out of the files
    return d


def write_json(result: SimResult, stream, version: str) -> None:
    doc = {
        "version": version,
        "config": _config_dict(result.config),
        "rows": [asdict(r) for r in result.rows],
    }
    json.dump(doc, stream, indent=2, sort_keys=True)
    stream.write("\n")


def format_summary(result: SimResult) -> str:
    """Rejection rates (and coverage) in percent, flagging values inside the
    binomial band around the nominal level."""
    cfg = result.config
    band = binomial_band(cfg.alpha, cfg.n_sim)
    cov_band = binomial_band(1 - cfg.alpha, cfg.n_sim)
    out = io.StringIO()
    out.write(
        f"n_sim={cfg.n_sim} B={cfg.n_perm} alpha={cfg.alpha:g}; "
        f"band for rejection [{band[0]:.2f}%, {band[1]:.2f}%], "
        f"for coverage [{cov_band[0]:.2f}%, {cov_band[1]:.2f}%]; '*' = inside band\n"
    )
    header = ("cell", "method", "estimand", "reject%", "band", "cover%", "band")
    out.write("\t".join(header) + "\n")
    for r in result.rows:
        cell = f"{r.scenario}/{r.censoring} n=({r.n1},{r.n2}) K={r.K} delta={r.delta:g}"
        if r.error:
            out.write(f"{cell}\t{r.method}\t{r.estimand}\tFAILED: {r.error}\n")
            continue
        rej = f"{100 * r.rejection_rate:.1f}"
        rej_flag = "*" if r.in_band(band, r.rejection_rate) else ""
        cov = "-" if r.coverage is None else f"{100 * r.coverage:.1f}"
        cov_flag = "*" if r.in_band(cov_band, r.coverage) else ""
        out.write("\t".join((cell, r.method, r.estimand, rej, rej_flag, cov, cov_flag)) + "\n")
    return out.getvalue()
