"""Convergence records, CSV serialization and log-log rate fits."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

HEADER = ("experiment_id", "refinement", "metric", "value", "stderr", "seeds_used")


@dataclass(frozen=True)
class ConvergenceRecord:
    experiment_id: str
    refinement: int
    metric: str
    value: float
    stderr: float
    seeds_used: int

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"{self.metric} at N={self.refinement} is not finite")
        if not self.stderr >= 0:
            raise ValueError("stderr must be non-negative")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def format_csv(records: Iterable[ConvergenceRecord], comments: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in records:
        w.writerow([r.experiment_id, r.refinement, r.metric, _fmt(r.value), _fmt(r.stderr), r.seeds_used])
    return buf.getvalue()


def write_csv(path, records, comments: Sequence[str] = ()) -> None:
    Path(path).write_text(format_csv(records, comments), encoding="utf-8", newline="\n")


def read_csv(path) -> list[ConvergenceRecord]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows or tuple(rows[0]) != HEADER:
        raise ValueError(f"{path}: missing or wrong CSV header")
    return [
        ConvergenceRecord(r[0], int(r[1]), r[2], float(r[3]), float(r[4]), int(r[5]))
        for r in rows[1:]
        if r
    ]


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit log(value) = intercept + slope * log(refinement)."""

    slope: float
    intercept: float
    r_squared: float
    points: int

    @property
    def order(self) -> float:
        return -self.slope

    def __iter__(self):
        return iter((self.slope, self.intercept, self.r_squared))


def fit_rate(records: Sequence[ConvergenceRecord], metric: str | None = None) -> RateFit:
    """Fit the largest half (at least 3) of the refinements for one metric."""
    if metric is not None:
        records = [r for r in records if r.metric == metric]
    metrics = {r.metric for r in records}
    if len(metrics) > 1:
        raise ValueError(f"records mix metrics {sorted(metrics)}; pass metric=")
    recs = sorted(records, key=lambda r: r.refinement)
    if len(recs) < 3:
        raise ValueError("need at least 3 records to fit a rate")
    if any(r.value <= 0 for r in recs):
        raise ValueError("rate fit needs positive values")
    k = max(3, math.ceil(len(recs) / 2))
    tail = recs[-k:]
    x = np.log([r.refinement for r in tail])
    y = np.log([r.value for r in tail])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (intercept + slope * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2, k)


def monotone_violations(records: Sequence[ConvergenceRecord], sigmas: float = 3.0) -> list[int]:
    """Refinements where the value rises by more than ``sigmas`` combined stderr."""
    recs = sorted(records, key=lambda r: r.refinement)
    bad = []
    for a, b in zip(recs, recs[1:]):
        if b.value - a.value > sigmas * math.hypot(a.stderr, b.stderr):
            bad.append(b.refinement)
    return bad
