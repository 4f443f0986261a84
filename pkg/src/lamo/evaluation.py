"""Windowed diagnostics over finished traces, plus per-interval bound checks."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import RunTrace, TraceArrays
from .objectives import MEAN_COSTS, BinGrid

BOUND_CHECKS = ("simplex", "lemma31", "lemma32", "lemma32_game", "thm33", "eq8")
FIXED_ETA_CHECKS = ("lemma31", "thm33", "eq8")
BASE_TOL = 1e-6
EXHAUSTIVE_MAX_T = 512


class EvaluationError(ValueError):
    pass


class UnsupportedCheck(EvaluationError):
    """A bound was requested for a trace whose learner does not satisfy its hypotheses."""


@dataclass(frozen=True)
class WindowSpec:
    """Moving window of ``width`` steps (or calendar days when ``calendar``)."""

    width: int
    stride: int = 1
    skip: int = 0
    calendar: bool = False

    def __post_init__(self):
        if self.width < 1:
            raise EvaluationError("window width must be >= 1")
        if self.stride < 1:
            raise EvaluationError("window stride must be >= 1")
        if self.skip < 0:
            raise EvaluationError("skip prefix must be >= 0")

    def check(self, T: int):
        if self.width > T:
            raise EvaluationError(f"window width {self.width} exceeds trace length {T}")

    def ends(self, T: int) -> np.ndarray:
        """1-based end indices width..T on the stride lattice."""
        self.check(T)
        return np.arange(self.width, T + 1, self.stride)


@dataclass
class ErrorSeries:
    ends: np.ndarray
    values: np.ndarray
    metric: str
    run_id: str = ""
    labels: np.ndarray | None = None  # calendar windows: the closing day

    def __len__(self):
        return len(self.values)

    def total(self) -> float:
        return total_error(self)

    def after(self, skip: int) -> "ErrorSeries":
        labels = None if self.labels is None else self.labels[skip:]
        return ErrorSeries(self.ends[skip:], self.values[skip:], self.metric, self.run_id, labels)

    def rows(self):
        for i, (e, v) in enumerate(zip(self.ends.tolist(), self.values.tolist())):
            end = str(self.labels[i]) if self.labels is not None else e
            yield [end, repr(float(v)), self.metric, self.run_id]

    def write_csv(self, path, append: bool = False):
        write_series_csv(path, [self], append=append)


def write_series_csv(path, series: list[ErrorSeries], append: bool = False):
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not append:
            w.writerow(["window_end", "value", "metric", "run_id"])
        for s in series:
            w.writerows(s.rows())


def read_series_csv(path) -> list[ErrorSeries]:
    groups: dict[tuple[str, str], list[tuple[str, float]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            groups.setdefault((row["run_id"], row["metric"]), []).append((row["window_end"], float(row["value"])))
    out = []
    for (run_id, metric), items in groups.items():
        ends = [e for e, _ in items]
        try:
            end_arr, labels = np.array([int(e) for e in ends]), None
        except ValueError:
            end_arr, labels = np.arange(1, len(ends) + 1), np.array(ends)
        out.append(ErrorSeries(end_arr, np.array([v for _, v in items]), metric, run_id, labels))
    return out


def as_arrays(trace) -> TraceArrays:
    if isinstance(trace, RunTrace):
        return trace.arrays()
    if isinstance(trace, TraceArrays):
        return trace
    raise TypeError(f"expected a RunTrace or TraceArrays, got {type(trace).__name__}")


def _predictions(arr: TraceArrays, mode: str) -> np.ndarray:
    if mode == "auto":
        mode = "expected" if arr.randomized else "realized"
    if mode == "realized":
        return arr.prediction
    if mode == "expected":
        return arr.policy_mean
    raise EvaluationError(f"prediction mode must be auto, realized or expected, got {mode!r}")


def _group_columns(arr: TraceArrays, groups) -> np.ndarray:
    if groups is None:
        return arr.fvals
    idx = []
    for g in groups:
        gid = getattr(g, "id", g)
        if gid not in arr.group_ids:
            raise EvaluationError(f"trace has no group {gid!r}")
        idx.append(arr.group_ids.index(gid))
    return arr.fvals[:, idx]


# ---------------------------------------------------------------------------
# windowed sums


def window_sums(values: np.ndarray, width: int, stride: int = 1) -> np.ndarray:
    """Sums over [e-width+1, e] for e = width..T (1-based), via prefix sums."""
    values = np.asarray(values, dtype=float)
    c = np.concatenate([np.zeros((1,) + values.shape[1:]), np.cumsum(values, axis=0)])
    ends = np.arange(width, len(values) + 1, stride)
    return c[ends] - c[ends - width]


def day_index(timestamps) -> tuple[np.ndarray, np.ndarray]:
    """Map each step to its calendar day; returns (day of each step as int, sorted unique days)."""
    ts = np.asarray(timestamps)
    if not np.issubdtype(ts.dtype, np.datetime64):
        raise EvaluationError("calendar windows need datetime timestamps")
    days = ts.astype("datetime64[D]")
    uniq, inv = np.unique(days, return_inverse=True)
    return inv, uniq


def day_windows(timestamps, n_days: int) -> tuple[list[tuple[int, int]], np.ndarray]:
    """Step ranges [start, stop) covering n_days consecutive calendar days.

    Days are consecutive on the calendar, so gaps with no data still count.
    Returns the ranges and the closing day of each window.
    """
    if n_days < 1:
        raise EvaluationError("window width in days must be >= 1")
    ts = np.asarray(timestamps).astype("datetime64[D]")
    if len(ts) == 0:
        return [], np.array([], dtype="datetime64[D]")
    if np.any(ts[1:] < ts[:-1]):
        raise EvaluationError("timestamps must be nondecreasing")
    first, last = ts[0], ts[-1]
    span = int((last - first).astype(int)) + 1
    if n_days > span:
        raise EvaluationError(f"window of {n_days} days exceeds the {span}-day trace")
    closing = first + np.arange(n_days - 1, span).astype("timedelta64[D]")
    opening = closing - np.timedelta64(n_days - 1, "D")
    starts = np.searchsorted(ts, opening, side="left")
    stops = np.searchsorted(ts, closing, side="right")
    return list(zip(starts.tolist(), stops.tolist())), closing


def _calendar_series(per_step: np.ndarray, timestamps, n_days: int, reduce) -> tuple[np.ndarray, np.ndarray]:
    ranges, closing = day_windows(timestamps, n_days)
    c = np.concatenate([np.zeros((1,) + per_step.shape[1:]), np.cumsum(per_step, axis=0)])
    vals = np.empty(len(ranges))
    for i, (a, b) in enumerate(ranges):
        vals[i] = reduce(c[b] - c[a], b - a) if b > a else 0.0
    return vals, closing


def ma_error_series(y, p, fvals, window: WindowSpec, timestamps=None) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Per-window max_f |mean f (y - p)|; the sign pair makes the sup an absolute value."""
    resid = (np.asarray(y, float) - np.asarray(p, float))[:, None] * np.asarray(fvals, float)
    if window.calendar:
        vals, closing = _calendar_series(resid, timestamps, window.width,
                                         lambda s, k: float(np.abs(s).max() / k) if s.size else 0.0)
        return np.arange(1, len(vals) + 1), vals, closing
    sums = window_sums(resid, window.width, window.stride)
    vals = np.abs(sums).max(axis=1) / window.width if resid.shape[1] else np.zeros(len(sums))
    return window.ends(len(resid)), vals, None


def local_multiaccuracy_error(trace, window: WindowSpec, groups=None, mode: str = "auto") -> ErrorSeries:
    arr = as_arrays(trace)
    if not window.calendar:
        window.check(len(arr))
    p = _predictions(arr, mode)
    ends, vals, labels = ma_error_series(arr.y, p, _group_columns(arr, groups), window, arr.timestamps)
    return ErrorSeries(ends, vals, "ma", arr.meta.get("run_id", ""), labels)


def _per_step_cost(arr: TraceArrays, cost: str, mode: str) -> np.ndarray:
    if cost not in MEAN_COSTS:
        raise EvaluationError(f"unknown cost {cost!r}")
    fn = MEAN_COSTS[cost][0]
    if arr.baseline is None:
        raise EvaluationError("trace has no baseline column")
    if mode == "auto":
        mode = "expected" if arr.randomized else "realized"
    if mode == "expected":
        if arr.policies is None:
            raise EvaluationError("expected costs need the per-step policies")
        mine = np.array([pol.probs @ fn(pol.support, y) for pol, y in zip(arr.policies, arr.y)])
    elif mode == "realized":
        mine = fn(arr.prediction, arr.y)
    else:
        raise EvaluationError(f"unknown prediction mode {mode!r}")
    return mine - fn(arr.baseline, arr.y)


def local_prediction_error(trace, window: WindowSpec, cost: str = "squared", mode: str = "auto") -> ErrorSeries:
    arr = as_arrays(trace)
    diff = _per_step_cost(arr, cost, mode)
    run_id = arr.meta.get("run_id", "")
    if window.calendar:
        vals, closing = _calendar_series(diff, arr.timestamps, window.width, lambda s, k: float(s / k))
        return ErrorSeries(np.arange(1, len(vals) + 1), vals, "pred", run_id, closing)
    window.check(len(diff))
    return ErrorSeries(window.ends(len(diff)), window_sums(diff, window.width, window.stride) / window.width,
                       "pred", run_id)


def total_error(series: ErrorSeries) -> float:
    return float(math.fsum(np.asarray(series.values, dtype=float).tolist()))


# ---------------------------------------------------------------------------
# whole-horizon sup-norm errors


def multiaccuracy_error(y, p, fvals) -> float:
    resid = (np.asarray(y, float) - np.asarray(p, float))[:, None] * np.asarray(fvals, float)
    return float(np.abs(resid.sum(axis=0)).max() / len(resid))


def multicalibration_error(y, p, fvals, m: int) -> float:
    """sup over groups, signs and bins of mean f 1{p in bin} (y - midpoint)."""
    grid = BinGrid(m)
    y = np.asarray(y, float)
    bins = grid.index(np.asarray(p, float))
    fvals = np.asarray(fvals, float)
    T = len(y)
    worst = 0.0
    for j in range(1, m + 1):
        sel = bins == j
        if not sel.any():
            continue
        s = (fvals[sel] * (y[sel] - grid.midpoint(j))[:, None]).sum(axis=0)
        worst = max(worst, float(np.abs(s).max()) / T)
    return worst


def ma_mc_gap(y, p, fvals, m: int) -> float:
    """m * MC error + 1/(2m) - MA error; nonnegative whenever the relation holds."""
    return m * multicalibration_error(y, p, fvals, m) + 1.0 / (2 * m) - multiaccuracy_error(y, p, fvals)


# ---------------------------------------------------------------------------
# per-interval bound checks


@dataclass
class CheckResult:
    name: str
    intervals: int = 0
    min_slack: float = math.inf
    worst_interval: tuple[int, int] | None = None
    violations: int = 0
    tolerance: float = 0.0

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def fold(self, slack: np.ndarray, starts: np.ndarray, ends: np.ndarray, tol: np.ndarray | float):
        if slack.size == 0:
            return
        self.intervals += slack.size
        self.violations += int(np.count_nonzero(slack < -np.asarray(tol)))
        i = int(np.argmin(slack))
        if slack[i] < self.min_slack:
            self.min_slack = float(slack[i])
            self.worst_interval = (int(np.broadcast_to(starts, slack.shape)[i]),
                                   int(np.broadcast_to(ends, slack.shape)[i]))

    def line(self) -> str:
        status = "ok" if self.ok else "VIOLATED"
        where = "" if self.worst_interval is None else f" worst=[{self.worst_interval[0]},{self.worst_interval[1]}]"
        return (f"{self.name}: {status} intervals={self.intervals} violations={self.violations} "
                f"min_slack={self.min_slack:.6g}{where}")


@dataclass
class BoundReport:
    results: dict[str, CheckResult] = field(default_factory=dict)
    exhaustive: bool = True
    eta: float | None = None
    gamma: float | None = None

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results.values())

    @property
    def violations(self) -> int:
        return sum(r.violations for r in self.results.values())

    def __getitem__(self, name) -> CheckResult:
        return self.results[name]

    def lines(self) -> list[str]:
        return [r.line() for r in self.results.values()]


def _meta_float(meta, key):
    v = meta.get(key, "")
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


def _fixed_eta(arr: TraceArrays, eta):
    if eta is not None:
        return float(eta)
    meta = arr.meta
    if str(meta.get("fixed_eta", "True")) != "True" or meta.get("learner") not in (None, "fixed_share"):
        raise UnsupportedCheck(
            f"fixed-rate bounds need a fixed-eta fixed_share trace (learner={meta.get('learner')}, "
            f"eta mode={meta.get('eta_mode')})")
    etas = arr.eta[np.isfinite(arr.eta)]
    if etas.size == 0:
        raise UnsupportedCheck("trace records no learning rate")
    if np.ptp(etas) > 1e-15:
        raise UnsupportedCheck("learning rate varies across the trace")
    return float(etas[0])


def interval_sample(T: int, count: int, rng: np.random.Generator, width: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Random 1-based intervals [r, s]; fixed width when ``width`` is given."""
    if width is not None:
        r = rng.integers(1, T - width + 2, size=count)
        return r, r + width - 1
    a = rng.integers(1, T + 1, size=count)
    b = rng.integers(1, T + 1, size=count)
    return np.minimum(a, b), np.maximum(a, b)


def verify_interval_bounds(trace, checks=("simplex", "lemma31", "lemma32", "thm33"), eta: float | None = None,
                           gamma: float | None = None, tau: int | None = None, sample_count: int = 10_000,
                           solver_tol: float | None = None, seed: int = 0) -> BoundReport:
    """Evaluate the per-interval inequalities of the fixed-share analysis on a trace.

    Every interval is checked when T <= 512; otherwise ``sample_count`` random
    intervals.  A violation is a slack below -(1e-6 + solver tolerance),
    scaled by the interval length for the summed weighted-loss check.
    """
    arr = as_arrays(trace)
    unknown = set(checks) - set(BOUND_CHECKS)
    if unknown:
        raise EvaluationError(f"unknown checks {sorted(unknown)}")
    T, n = arr.expected_losses.shape
    if T == 0:
        raise EvaluationError("empty trace")
    q, L = arr.q, arr.expected_losses
    if np.isnan(q).any():
        raise UnsupportedCheck("trace stores thinned weights; bounds need q at every step")
    if solver_tol is None:
        solver_tol = _meta_float(arr.meta, "solver_tol") or 0.0
    tol = BASE_TOL + solver_tol
    report = BoundReport(exhaustive=T <= EXHAUSTIVE_MAX_T)

    need_fixed = [c for c in checks if c in FIXED_ETA_CHECKS]
    if need_fixed:
        eta = _fixed_eta(arr, eta)
        gamma = _meta_float(arr.meta, "gamma") if gamma is None else float(gamma)
        if gamma is None or not 0 < gamma <= 0.5:
            raise UnsupportedCheck(f"fixed-share bounds need 0 < gamma <= 1/2, got {gamma}")
        if not 0 < eta <= 1:
            raise UnsupportedCheck(f"fixed-share bounds need 0 < eta <= 1, got {eta}")
        report.eta, report.gamma = eta, gamma

    if "simplex" in checks:
        res = CheckResult("simplex", tolerance=1e-9)
        slack = np.minimum(q.min(axis=1), -np.abs(q.sum(axis=1) - 1.0))
        idx = np.arange(1, T + 1)
        res.fold(slack, idx, idx, 1e-9)
        report.results["simplex"] = res

    ql = np.einsum("tn,tn->t", q, L)
    ql2 = np.einsum("tn,tn->t", q, L * L)
    cql = np.concatenate([[0.0], np.cumsum(ql)])
    cql2 = np.concatenate([[0.0], np.cumsum(ql2)])
    cL = np.vstack([np.zeros(n), np.cumsum(L, axis=0)])
    cgv = np.concatenate([[0.0], np.cumsum(np.nan_to_num(arr.game_value, nan=np.inf))])

    def batches():
        if report.exhaustive:
            for r in range(1, T + 1):
                s = np.arange(r, T + 1)
                yield np.full(s.shape, r), s
        else:
            rng = np.random.default_rng(seed)
            yield interval_sample(T, sample_count, rng)

    results = {c: CheckResult(c, tolerance=tol) for c in checks if c not in ("simplex", "eq8")}
    for r, s in batches():
        k = (s - r + 1).astype(float)
        sum_ql = cql[s] - cql[r - 1]
        sum_ql2 = cql2[s] - cql2[r - 1]
        best = (cL[s] - cL[r - 1]).max(axis=1)
        if "lemma31" in results:
            rhs = best - eta * sum_ql2 - (math.log(n / gamma) + 2 * gamma * k) / eta
            results["lemma31"].fold(sum_ql - rhs, r, s, tol)
        if "lemma32" in results:
            results["lemma32"].fold(-sum_ql, r, s, k * tol)
        if "lemma32_game" in results:
            results["lemma32_game"].fold((cgv[s] - cgv[r - 1]) - sum_ql, r, s, k * tol)
        if "thm33" in results:
            rhs = eta * sum_ql2 / k + (math.log(n / gamma) + 2 * gamma * k) / (eta * k)
            results["thm33"].fold(rhs - best / k, r, s, tol)
    report.results.update(results)

    if "eq8" in checks:
        width = tau if tau is not None else int(_meta_float(arr.meta, "tau") or 0)
        if not 1 <= width <= T:
            raise UnsupportedCheck(f"width envelope needs 1 <= tau <= T, got {width}")
        res = CheckResult("eq8", tolerance=tol)
        s = np.arange(width, T + 1)
        r = s - width + 1
        best = (cL[s] - cL[r - 1]).max(axis=1) / width
        env = 2 * math.sqrt(math.log(n * 2 * width) + 1) * np.sqrt(np.maximum(cql2[s] - cql2[r - 1], 0)) / width
        res.fold(env - best, r, s, tol)
        report.results["eq8"] = res
    return report


def bound_slacks_naive(q, L, eta, gamma, r, s) -> dict[str, float]:
    """Direct loops for one interval [r, s] (1-based); used as a cross-check."""
    n = q.shape[1]
    k = s - r + 1
    sum_ql = sum(float(np.dot(q[t], L[t])) for t in range(r - 1, s))
    sum_ql2 = sum(float(np.dot(q[t], L[t] ** 2)) for t in range(r - 1, s))
    best = max(sum(L[t, j] for t in range(r - 1, s)) for j in range(n))
    return {
        "lemma31": sum_ql - (best - eta * sum_ql2 - (math.log(n / gamma) + 2 * gamma * k) / eta),
        "lemma32": -sum_ql,
        "thm33": eta * sum_ql2 / k + (math.log(n / gamma) + 2 * gamma * k) / (eta * k) - best / k,
    }


def save_series(directory, series: list[ErrorSeries], name: str = "series.csv") -> Path:
    path = Path(directory) / name
    write_series_csv(path, series)
    return path
