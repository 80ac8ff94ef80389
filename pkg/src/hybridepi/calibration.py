"""Target preparation, error metrics, grid search, and run-count analysis."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Callable, NamedTuple, Sequence

import numpy as np


@dataclass(frozen=True)
class TargetSeries:
    """Per-day expected symptomatic counts (7-day-averaged case data)."""

    start: date
    values: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.values) < 0):
            raise ValueError("target values must be non-negative")

    def dates(self) -> list[date]:
        return [self.start + timedelta(days=k) for k in range(len(self.values))]


@dataclass(frozen=True)
class RunMetrics:
    """Per-run scalar series (mean absolute error or duration)."""

    values: np.ndarray
    kind: str = "mae"


def seven_day_average(daily: Sequence[float]) -> np.ndarray:
    """Trailing 7-day mean; the first six days average what is available."""
    daily = np.asarray(daily, dtype=float)
    if daily.size == 0:
        raise ValueError("need at least one day of data")
    if daily.size < 7:
        raise ValueError("need at least 7 days of data")
    out = np.empty_like(daily)
    csum = np.concatenate([[0.0], np.cumsum(daily)])
    for k in range(daily.size):
        lo = max(0, k - 6)
        out[k] = (csum[k + 1] - csum[lo]) / (k + 1 - lo)
    return out


def mean_absolute_error(sim: Sequence[float], target: Sequence[float]) -> float:
    sim = np.asarray(sim, dtype=float)
    tgt = np.asarray(target, dtype=float)
    if sim.shape != tgt.shape:
        raise ValueError(f"series lengths differ: {sim.shape} vs {tgt.shape}")
    return float(np.mean(np.abs(sim - tgt)))


def write_target_csv(target: TargetSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "symptomatic_7day_avg"])
        for d, v in zip(target.dates(), target.values):
            w.writerow([d.isoformat(), f"{v:.12g}"])


def read_target_csv(path) -> TargetSeries:
    dates, values = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            dates.append(date.fromisoformat(row["date"]))
            values.append(float(row["symptomatic_7day_avg"]))
    if not dates:
        raise ValueError("empty target CSV")
    return TargetSeries(start=dates[0], values=np.array(values))


# ---------------------------------------------------------------------------
# Grid search over the two-interval infection constant
# ---------------------------------------------------------------------------

class GridSearchResult(NamedTuple):
    best: tuple[float, float]
    errors: np.ndarray          # (len(candidates2), len(candidates1))
    candidates1: tuple[float, ...]
    candidates2: tuple[float, ...]


def grid_search(scenario: Callable[[float, float, int], np.ndarray],
                target: np.ndarray,
                candidates_interval1: Sequence[float],
                candidates_interval2: Sequence[float],
                n_runs: int, base_seed: int = 0) -> GridSearchResult:
    """Exhaustive search over (beta1, beta2) pairs by mean MAE over runs.

    ``scenario(beta1, beta2, seed)`` returns the per-day symptomatic series;
    the infection constant switches from beta1 to beta2 at the scenario's
    configured interval boundary.  Runs reuse the same seed sequence across
    cells (common random numbers).  Ties resolve to the lexicographically
    smaller pair.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    c1 = tuple(float(v) for v in candidates_interval1)
    c2 = tuple(float(v) for v in candidates_interval2)
    if not c1 or not c2:
        raise ValueError("candidate lists must be non-empty")
    target = np.asarray(target, dtype=float)

    errors = np.empty((len(c2), len(c1)))
    best = None
    best_err = np.inf
    for i1, b1 in enumerate(c1):
        for i2, b2 in enumerate(c2):
            maes = [mean_absolute_error(scenario(b1, b2, base_seed + r), target)
                    for r in range(n_runs)]
            cell = float(np.mean(maes))
            errors[i2, i1] = cell
            if cell < best_err or (cell == best_err
                                   and (b1, b2) < (best or (np.inf, np.inf))):
                best_err = cell
                best = (b1, b2)
    return GridSearchResult(best=best, errors=errors,
                            candidates1=c1, candidates2=c2)


def write_error_table_csv(result: GridSearchResult, path) -> None:
    """Table with interval-1 candidates as columns, interval-2 as rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beta2\\beta1"] + [f"{v:.6g}" for v in result.candidates1])
        for i2, b2 in enumerate(result.candidates2):
            w.writerow([f"{b2:.6g}"]
                       + [f"{result.errors[i2, i1]:.6g}"
                          for i1 in range(len(result.candidates1))])


# ---------------------------------------------------------------------------
# Run-count convergence
# ---------------------------------------------------------------------------

class RunCountResult(NamedTuple):
    runs: int
    converged: bool


def cumulative_means(metrics: Sequence[float]) -> np.ndarray:
    m = np.asarray(metrics, dtype=float)
    return np.cumsum(m) / np.arange(1, len(m) + 1)


def runs_to_threshold(metrics: Sequence[float],
                      threshold_pct: float) -> RunCountResult:
    """Smallest K after which all consecutive cumulative-mean changes stay
    below the threshold.

    With cumulative means c_1..c_n, returns the smallest K such that
    |c_{k+1} - c_k| / c_k < threshold for every k >= K.  If even the final
    pair violates the threshold the result is n with ``converged=False``.
    """
    m = np.asarray(metrics, dtype=float)
    if m.size < 2:
        raise ValueError("need at least two runs")
    c = cumulative_means(m)
    rel = np.abs(np.diff(c)) / np.abs(c[:-1])
    ok = rel < threshold_pct / 100.0
    k = len(ok)
    while k > 0 and ok[k - 1]:
        k -= 1
    # k is the last violating pair index (0-based); runs needed = k + 1.
    runs = k + 1
    return RunCountResult(runs=runs, converged=runs < len(m))
