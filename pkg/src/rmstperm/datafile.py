"""Dataset files and JSON reports.

Datasets are CSV files with a ``time,status,group`` header and one subject per
row. Exactly two distinct group labels must occur; they are mapped to groups
1 and 2 in order of first appearance.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

from .errors import DataFormatError
from .inference import InferenceResult
from .survival import Sample

__all__ = ["Dataset", "read_dataset", "write_dataset", "parse_dataset", "ReportDocument"]

HEADER = ("time", "status", "group")


@dataclass(frozen=True)
class Dataset:
    """Two samples plus the original labels of group 1 and group 2."""

    sample1: Sample
    sample2: Sample
    labels: tuple[str, str]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.sample1, self.sample2, self.labels) == (other.sample1, other.sample2, other.labels)


def parse_dataset(text: str, decimals: Optional[int] = None) -> Dataset:
    """Parse CSV text; ``decimals`` rounds the times, e.g. to create ties
    deliberately when times were recorded in coarse units."""
    rows = list(csv.reader(text.splitlines()))
    # drop blank lines but keep numbering for messages
    numbered = [(i + 1, r) for i, r in enumerate(rows) if any(cell.strip() for cell in r)]
    if not numbered:
        raise DataFormatError("file is empty; expected a 'time,status,group' header")
    line, header = numbered[0]
    if tuple(c.strip().lower() for c in header) != HEADER:
        raise DataFormatError(f"header must be 'time,status,group', got {','.join(header)!r}", row=line)
    data: dict[str, tuple[list, list]] = {}
    for line, row in numbered[1:]:
        if len(row) != 3:
            raise DataFormatError(f"expected 3 fields, got {len(row)}", row=line)
        t_raw, d_raw, label = (c.strip() for c in row)
        if not t_raw or not d_raw or not label:
            raise DataFormatError("missing field", row=line)
        try:
            t = float(t_raw)
        except ValueError:
            raise DataFormatError(f"time {t_raw!r} is not a number", row=line) from None
        if not math.isfinite(t) or t < 0:
            raise DataFormatError(f"time must be finite and non-negative, got {t_raw}", row=line)
        if d_raw not in ("0", "1"):
            raise DataFormatError(f"status must be 0 or 1, got {d_raw!r}", row=line)
        if decimals is not None:
            t = round(t, decimals)
        times, statuses = data.setdefault(label, ([], []))
        times.append(t)
        statuses.append(int(d_raw))
    if len(data) != 2:
        raise DataFormatError(f"expected exactly 2 groups, found {len(data)}: {sorted(data)}")
    (l1, (t1, d1)), (l2, (t2, d2)) = data.items()
    return Dataset(Sample(t1, d1, 1), Sample(t2, d2, 2), (l1, l2))


def read_dataset(path: str, decimals: Optional[int] = None) -> Dataset:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_dataset(text, decimals)


def write_dataset(dataset: Dataset, path_or_stream) -> None:
    """Write ``dataset`` so that :func:`read_dataset` restores it exactly."""

    def emit(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for sample, label in zip((dataset.sample1, dataset.sample2), dataset.labels):
            for t, d in zip(sample.times.tolist(), sample.statuses.tolist()):
                writer.writerow((repr(t), d, label))

    if hasattr(path_or_stream, "write"):
        emit(path_or_stream)
    else:
        with open(path_or_stream, "w", encoding="utf-8", newline="") as fh:
            emit(fh)


def _group_summary(sample: Sample, label: str, estimate) -> dict:
    n = len(sample)
    return {
        "label": label,
        "n": n,
        "events": int(sample.statuses.sum()),
        "censoring_rate": float(1 - sample.statuses.mean()),
        "rmst": estimate.mu_hat,
        "sigma2": estimate.sigma2_hat,
    }


@dataclass
class ReportDocument:
    """Result of ``rmstperm test`` in a form that survives a JSON round trip."""

    version: str
    tau: float
    alpha: float
    n_perm: int
    seed: int
    groups: list[dict]
    results: list[InferenceResult]
    notes: list[str] = field(default_factory=list)

    @classmethod
    def build(cls, dataset: Dataset, estimates, results, *, version, tau, alpha, n_perm, seed) -> "ReportDocument":
        groups = [
            _group_summary(dataset.sample1, dataset.labels[0], estimates[0]),
            _group_summary(dataset.sample2, dataset.labels[1], estimates[1]),
        ]
        notes = [f"group 1 = {dataset.labels[0]!r}, group 2 = {dataset.labels[1]!r}; differences are group 1 - group 2"]
        return cls(version, float(tau), float(alpha), int(n_perm), int(seed), groups, list(results), notes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["results"] = [r.to_dict() for r in self.results]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReportDocument":
        d = dict(d)
        d["results"] = [InferenceResult.from_dict(r) for r in d["results"]]
        return cls(**d)

    def to_json(self) -> str:
        # floats use repr, and inf/None are preserved by the json module
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ReportDocument":
        return cls.from_dict(json.loads(text))

    def format_table(self) -> str:
        lines = [f"rmstperm {self.version}  tau={self.tau:g}  alpha={self.alpha:g}  B={self.n_perm}  seed={self.seed}"]
        for i, g in enumerate(self.groups, start=1):
            lines.append(
                f"group {i} ({g['label']}): n={g['n']} events={g['events']} "
                f"censored={100 * g['censoring_rate']:.1f}%  RMST={g['rmst']:.4f}"
            )
        lines.append("")
        lines.append(f"{'method':<20}{'estimand':<12}{'estimate':>10}{'lower':>10}{'upper':>10}{'stat':>9}{'p':>9}  reject")
        for r in self.results:
            lo = "-" if r.ci_lower is None else f"{r.ci_lower:.4f}"
            hi = "-" if r.ci_upper is None else f"{r.ci_upper:.4f}"
            lines.append(
                f"{r.method:<20}{r.estimand:<12}{r.point_estimate:>10.4f}{lo:>10}{hi:>10}"
                f"{r.statistic:>9.4f}{r.p_value:>9.4f}  {'yes' if r.reject else 'no'}"
            )
        extended = [r.n_extended for r in self.results if r.n_perm]
        if extended:
            lines.append("")
            lines.append(f"permutation replicates with horizontal extension: {max(extended)} of {self.n_perm}")
        lines.extend(self.notes)
        return "\n".join(lines) + "\n"
