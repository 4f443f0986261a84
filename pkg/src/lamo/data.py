"""Sample streams: GEFCom-style load files, the COMPAS CSV, and synthetic
generators (the two-phase switch and the jump-shift linear model)."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .objectives import GroupFunction, LabelRange, UNIT

log = logging.getLogger(__name__)

GEFCOM_BANDS = [(0, 20), (20, 40), (40, 60), (60, 80), (80, 100)]
COMPAS_GROUPS = ("African-American", "Caucasian", "Hispanic")
COMPAS_CUTOFF = pd.Timestamp("2014-04-01")
DEFAULT_LEVELS = tuple(np.round(np.arange(1, 100) / 100, 2))


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class SampleStream:
    """Ordered samples with precomputed group-function values.

    ``fvals`` has one column per group id; ``features`` holds the raw
    feature matrix used by online baselines.
    """

    y: np.ndarray
    fvals: np.ndarray
    group_ids: tuple[str, ...]
    timestamps: np.ndarray | None = None
    baseline: np.ndarray | None = None
    features: np.ndarray | None = None
    feature_names: tuple[str, ...] = ()
    competitors: np.ndarray | None = None
    competitor_ids: tuple[str, ...] = ()
    label_range: LabelRange = UNIT
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        T = self.y.size
        self.fvals = np.asarray(self.fvals, dtype=float).reshape(T, -1)
        self.group_ids = tuple(self.group_ids)
        if self.fvals.shape[1] != len(self.group_ids):
            raise DataError("one group id per fvals column required")
        if np.any(self.fvals < 0) or np.any(self.fvals > 1):
            raise DataError("group values must lie in [0, 1]")
        if not self.label_range.contains(self.y):
            raise DataError("labels outside the label range")
        if self.baseline is not None:
            self.baseline = np.asarray(self.baseline, dtype=float)
            if self.baseline.shape != (T,) or not self.label_range.contains(self.baseline):
                raise DataError("baseline must have one in-range value per sample")
        if self.timestamps is None:
            self.timestamps = np.arange(1, T + 1)
        self.timestamps = np.asarray(self.timestamps)
        if self.timestamps.shape != (T,):
            raise DataError("one timestamp per sample required")
        if T > 1 and np.any(self.timestamps[1:] < self.timestamps[:-1]):
            raise DataError("timestamps must be nondecreasing")
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=float).reshape(T, -1)
        if self.competitors is not None:
            self.competitors = np.asarray(self.competitors, dtype=float).reshape(T, -1)

    def __len__(self):
        return self.y.size

    def head(self, n: int) -> "SampleStream":
        cut = lambda a: None if a is None else a[:n]
        return SampleStream(
            self.y[:n], self.fvals[:n], self.group_ids, self.timestamps[:n], cut(self.baseline),
            cut(self.features), self.feature_names, cut(self.competitors), self.competitor_ids,
            self.label_range, dict(self.meta),
        )

    def to_frame(self) -> pd.DataFrame:
        cols = {"timestamp": self.timestamps, "y": self.y}
        if self.baseline is not None:
            cols["baseline"] = self.baseline
        for j, gid in enumerate(self.group_ids):
            cols[f"f:{gid}"] = self.fvals[:, j]
        if self.features is not None:
            for j, name in enumerate(self.feature_names or [f"x{j}" for j in range(self.features.shape[1])]):
                cols[f"x:{name}"] = self.features[:, j]
        if self.competitors is not None:
            for j, cid in enumerate(self.competitor_ids):
                cols[f"c:{cid}"] = self.competitors[:, j]
        return pd.DataFrame(cols)

    def to_csv(self, path):
        """Canonical cache format."""
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path, label_range: LabelRange = UNIT) -> "SampleStream":
        df = pd.read_csv(path, float_precision="round_trip")
        pick = lambda prefix: [c for c in df.columns if c.startswith(prefix)]
        f_cols, x_cols, c_cols = pick("f:"), pick("x:"), pick("c:")
        return cls(
            y=df["y"].to_numpy(float),
            fvals=df[f_cols].to_numpy(float),
            group_ids=tuple(c[2:] for c in f_cols),
            timestamps=_parse_timestamps(df["timestamp"]),
            baseline=df["baseline"].to_numpy(float) if "baseline" in df else None,
            features=df[x_cols].to_numpy(float) if x_cols else None,
            feature_names=tuple(c[2:] for c in x_cols),
            competitors=df[c_cols].to_numpy(float) if c_cols else None,
            competitor_ids=tuple(c[2:] for c in c_cols),
            label_range=label_range,
        )


def _parse_timestamps(col: pd.Series) -> np.ndarray:
    if np.issubdtype(col.dtype, np.number):
        return col.to_numpy()
    return pd.to_datetime(col).to_numpy()


def stream_from_records(records, groups: list[GroupFunction], y_col="y", baseline_col=None,
                        timestamp_col=None, label_range: LabelRange = UNIT) -> SampleStream:
    """Evaluate declared group functions on a list of feature mappings."""
    fv = np.array([[g(r) for g in groups] for r in records], dtype=float).reshape(len(records), len(groups))
    return SampleStream(
        y=np.array([float(r[y_col]) for r in records]),
        fvals=fv,
        group_ids=tuple(g.id for g in groups),
        timestamps=None if timestamp_col is None else np.array([r[timestamp_col] for r in records]),
        baseline=None if baseline_col is None else np.array([float(r[baseline_col]) for r in records]),
        label_range=label_range,
    )


# ---------------------------------------------------------------------------
# quantile forecasts


@dataclass
class QuantileForecastTable:
    timestamps: np.ndarray
    levels: np.ndarray
    values: np.ndarray
    repaired: int = 0

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=float)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.levels.ndim != 1 or np.any(np.diff(self.levels) <= 0):
            raise DataError("quantile levels must be strictly increasing")
        if np.any(self.levels <= 0) or np.any(self.levels >= 1):
            raise DataError("quantile levels must lie in (0, 1)")
        if self.values.shape[1] != self.levels.size:
            raise DataError("one forecast per level required")
        crossing = np.any(np.diff(self.values, axis=1) < 0, axis=1)
        if crossing.any():
            self.repaired = int(crossing.sum())
            log.info("sorted %d quantile rows with crossing forecasts", self.repaired)
            self.values = np.sort(self.values, axis=1)

    @classmethod
    def from_long_csv(cls, path) -> "QuantileForecastTable":
        """Read the long-form (timestamp, level, value) schema."""
        df = pd.read_csv(path, float_precision="round_trip")
        missing = {"timestamp", "level", "value"} - set(df.columns)
        if missing:
            raise DataError(f"forecast file lacks columns {sorted(missing)}")
        df["timestamp"] = pd.to_datetime(df["timestamp"])
        wide = df.pivot_table(index="timestamp", columns="level", values="value", aggfunc="first").sort_index()
        if wide.isna().any().any():
            raise DataError("forecast table has missing (timestamp, level) entries")
        return cls(wide.index.to_numpy(), wide.columns.to_numpy(float), wide.to_numpy(float))

    def to_long_frame(self) -> pd.DataFrame:
        T, k = self.values.shape
        return pd.DataFrame({
            "timestamp": np.repeat(self.timestamps, k),
            "level": np.tile(self.levels, T),
            "value": self.values.ravel(),
        })


def interpolate_cdf(levels, forecasts, x: float) -> float:
    """Piecewise-linear CDF through the knots (forecast_i, level_i).

    0 below the lowest forecast and 1 at or above the highest.  Between
    knots the half-open segment [theta_{i-1}, theta_i) is used, so equal
    adjacent forecasts form a jump and a knot maps to the largest level
    sharing its forecast value.
    """
    levels = np.asarray(levels, dtype=float)
    th = np.asarray(forecasts, dtype=float)
    i = int(np.searchsorted(th, x, side="right"))
    if i == 0:
        return 0.0
    if i == th.size:
        return 1.0
    lo, hi = i - 1, i
    return float(levels[lo] + (levels[hi] - levels[lo]) / (th[hi] - th[lo]) * (x - th[lo]))


def exceedance_probability(table: QuantileForecastTable, threshold: float) -> np.ndarray:
    return np.array([1.0 - interpolate_cdf(table.levels, row, threshold) for row in table.values])


def seasonal_quantile_forecasts(timestamps, load, levels=DEFAULT_LEVELS, weeks: int = 8,
                                min_obs: int = 2) -> QuantileForecastTable:
    """Fallback forecasts from trailing loads at the same hour of week.

    Uses only loads strictly before each timestamp.  With fewer than
    ``min_obs`` same-hour-of-week observations it widens to the same hour of
    day over the trailing two weeks, then to all history.  Rows with no
    history are NaN.
    """
    ts = pd.DatetimeIndex(pd.to_datetime(timestamps))
    load = np.asarray(load, dtype=float)
    how = (ts.dayofweek * 24 + ts.hour).to_numpy()
    hod = ts.hour.to_numpy()
    secs = ts.asi8 // 10**9
    week = 7 * 24 * 3600
    levels = np.asarray(levels, dtype=float)
    out = np.full((len(ts), levels.size), np.nan)
    by_how: dict[int, list[int]] = {}
    by_hod: dict[int, list[int]] = {}
    for t in range(len(ts)):
        cand = [j for j in by_how.get(how[t], [])[-weeks:] if secs[t] - secs[j] <= weeks * week]
        if len(cand) < min_obs:
            cand = [j for j in by_hod.get(hod[t], [])[-14:] if secs[t] - secs[j] <= 14 * 86400]
        if len(cand) < min_obs:
            cand = list(range(t))
        if cand:
            out[t] = np.quantile(load[cand], levels)
        by_how.setdefault(how[t], []).append(t)
        by_hod.setdefault(hod[t], []).append(t)
    return QuantileForecastTable(ts.to_numpy(), levels, out)


def temperature_bands(temp) -> np.ndarray:
    temp = np.asarray(temp, dtype=float)
    return np.column_stack([(temp >= lo) & (temp < hi) for lo, hi in GEFCOM_BANDS]).astype(float)


def band_ids() -> tuple[str, ...]:
    return tuple(f"temp[{lo},{hi})" for lo, hi in GEFCOM_BANDS)


def load_gefcom(load_path, forecast_path=None, threshold_mw: float = 150.0, timestamp_col: str = "TIMESTAMP",
                load_col: str = "LOAD", temperature_cols=None, start=None, end=None, fallback_weeks: int = 8,
                levels=DEFAULT_LEVELS) -> SampleStream:
    """Binary load-exceedance stream with temperature-band groups.

    y = 1{load > threshold}; the baseline is 1 - F(threshold) from the
    interpolated quantile forecasts, or from seasonal empirical quantiles of
    past loads when no forecast file is given.  ``start``/``end`` restrict
    the evaluated period; earlier rows still feed the fallback forecasts.
    """
    df = pd.read_csv(load_path, float_precision="round_trip")
    if timestamp_col not in df or load_col not in df:
        raise DataError(f"load file needs columns {timestamp_col!r} and {load_col!r}")
    if temperature_cols is None:
        temperature_cols = [c for c in df.columns if c.lower().startswith("w") and c[1:].isdigit()]
        if not temperature_cols and "temperature" in df:
            temperature_cols = ["temperature"]
    if not temperature_cols:
        raise DataError("no temperature columns found")
    df["_ts"] = pd.to_datetime(df[timestamp_col])
    df = df.sort_values("_ts", kind="stable").reset_index(drop=True)
    df = df[df[load_col].notna()].reset_index(drop=True)
    temp = df[list(temperature_cols)].mean(axis=1, skipna=False)
    dropped = int(temp.isna().sum())
    if dropped:
        log.info("dropped %d records without temperature", dropped)
    df = df[temp.notna()].reset_index(drop=True)
    temp = temp[temp.notna()].to_numpy(float)

    if forecast_path is None:
        table = seasonal_quantile_forecasts(df["_ts"], df[load_col].to_numpy(float), levels, fallback_weeks)
        values = table.values
        source = "seasonal_fallback"
    else:
        table = QuantileForecastTable.from_long_csv(forecast_path)
        idx = pd.DatetimeIndex(table.timestamps)
        pos = idx.get_indexer(pd.DatetimeIndex(df["_ts"]))
        window = np.ones(len(df), dtype=bool)
        if start is not None:
            window &= (df["_ts"] >= pd.Timestamp(start)).to_numpy()
        if end is not None:
            window &= (df["_ts"] <= pd.Timestamp(end)).to_numpy()
        if np.any(pos[window] < 0):
            raise DataError(f"{int(np.sum(pos[window] < 0))} load timestamps have no forecast row")
        values = np.where(pos[:, None] >= 0, table.values[np.maximum(pos, 0)], np.nan)
        source = "forecast_file"

    keep = np.ones(len(df), dtype=bool)
    if start is not None:
        keep &= (df["_ts"] >= pd.Timestamp(start)).to_numpy()
    if end is not None:
        keep &= (df["_ts"] <= pd.Timestamp(end)).to_numpy()
    loads = df[load_col].to_numpy(float)[keep]
    vals = values[keep]
    base = np.array([
        0.5 if np.isnan(row).any() else 1.0 - interpolate_cdf(table.levels, row, threshold_mw) for row in vals
    ])
    return SampleStream(
        y=(loads > threshold_mw).astype(float),
        fvals=temperature_bands(temp[keep]),
        group_ids=band_ids(),
        timestamps=df["_ts"].to_numpy()[keep],
        baseline=base,
        features=np.column_stack([temp[keep], loads]),
        feature_names=("temperature", "load"),
        meta={"dataset": "gefcom", "threshold_mw": threshold_mw, "baseline_source": source,
              "dropped_missing_temperature": dropped},
    )


def synth_gefcom_frame(hours: int = 8760, seed: int = 0, start: str = "2011-01-01") -> pd.DataFrame:
    """Hourly load/temperature table with GEFCom2014-L column layout.

    Seasonal and daily temperature cycles drive a load curve that crosses
    150 MW; used when the competition files are not available.
    """
    rng = np.random.default_rng(seed)
    ts = pd.date_range(start, periods=hours, freq="h")
    day = np.arange(hours) / 24.0
    hour = ts.hour.to_numpy()
    temp = 52 - 25 * np.cos(2 * np.pi * (day - 15) / 365.25) - 8 * np.cos(2 * np.pi * (hour - 4) / 24)
    temp = temp + np.cumsum(rng.normal(0, 0.6, hours)) * 0.15 + rng.normal(0, 2.0, hours)
    temp = np.clip(temp, 1, 99)
    daily = 12 * np.sin(np.pi * np.clip(hour - 6, 0, 16) / 16)
    load = 118 + 0.035 * (temp - 60) ** 2 + daily + rng.normal(0, 6, hours)
    load += 10 * (ts.dayofweek.to_numpy() < 5)
    return pd.DataFrame({
        "ZONEID": 1,
        "TIMESTAMP": ts.strftime("%Y-%m-%d %H:%M:%S"),
        "LOAD": np.round(load, 1),
        "w1": np.round(temp, 1),
    })


def load_compas(path, date_col: str | None = None) -> SampleStream:
    """Recidivism stream ordered by screening date, rows after 2014-04-01 dropped."""
    df = pd.read_csv(path, float_precision="round_trip")
    if date_col is None:
        date_col = next((c for c in ("screening_date", "compas_screening_date") if c in df), None)
    required = {"race", "decile_score", "two_year_recid"}
    missing = required - set(df.columns) | ({"screening_date"} if date_col is None else set())
    if missing:
        raise DataError(f"COMPAS file lacks columns {sorted(missing)}")
    dates = pd.to_datetime(df[date_col], errors="coerce")
    bad = int(dates.isna().sum())
    if bad:
        log.info("dropped %d rows with unparseable dates", bad)
    df = df.assign(_date=dates, _order=np.arange(len(df)))
    df = df[df["_date"].notna() & (df["_date"] <= COMPAS_CUTOFF)]
    df = df.sort_values(["_date", "_order"], kind="stable")
    race = df["race"].to_numpy()
    fv = np.column_stack([(race == g) for g in COMPAS_GROUPS]).astype(float)
    return SampleStream(
        y=df["two_year_recid"].to_numpy(float),
        fvals=fv,
        group_ids=COMPAS_GROUPS,
        timestamps=df["_date"].to_numpy(),
        baseline=df["decile_score"].to_numpy(float) / 10.0,
        features=np.column_stack([df["decile_score"].to_numpy(float) / 10.0]),
        feature_names=("decile",),
        meta={"dataset": "compas", "dropped_bad_dates": bad},
    )


# ---------------------------------------------------------------------------
# synthetic generators


def gen_switch(T: int, seed: int = 0) -> SampleStream:
    """Labels 1 for the first T/2 rounds and 0 afterwards; one constant group."""
    if T % 2:
        raise DataError("switch stream needs an even horizon")
    y = np.r_[np.ones(T // 2), np.zeros(T // 2)]
    return SampleStream(y=y, fvals=np.ones((T, 1)), group_ids=("one",), features=np.ones((T, 1)),
                        feature_names=("one",), meta={"dataset": "switch", "seed": seed})


SHIFT_AMPLITUDES = {
    "small": (0.05, 0.5),
    "medium": (0.075, 1.0),
    "large": (0.1, 1.5),
}


@dataclass
class ShiftScenario:
    setting: str = "large"
    T: int = 3000
    d: int = 5
    seed: int = 0
    noise: float = 0.1
    segments: int = 30
    raw_groups: bool = False
    amplitudes: tuple[float, float] | None = None

    def __post_init__(self):
        if self.d < 1:
            raise DataError("dimension must be >= 1")
        if self.amplitudes is None:
            if self.setting not in SHIFT_AMPLITUDES:
                raise DataError(f"unknown shift setting {self.setting!r}")
            self.amplitudes = SHIFT_AMPLITUDES[self.setting]

    @property
    def boundaries(self) -> tuple[int, int]:
        return self.T // 3, 2 * self.T // 3


def jump_levels(scenario: ShiftScenario, rng: np.random.Generator) -> np.ndarray:
    """Piecewise-constant mu_t; each segment's level is uniform in its regime's range."""
    T = scenario.T
    small, large = scenario.amplitudes
    seg_len = max(1, T // scenario.segments)
    b1, b2 = scenario.boundaries
    mu = np.empty(T)
    for start in range(0, T, seg_len):
        amp = large if b1 <= start < b2 else small
        mu[start:start + seg_len] = rng.uniform(-amp, amp)
    # a segment straddling a regime boundary is split so each regime stays in range
    for b in (b1, b2):
        if b % seg_len:
            amp = large if b == b1 else small
            end = min(T, (b // seg_len + 1) * seg_len)
            mu[b:end] = rng.uniform(-amp, amp)
    return mu


def gen_jump_shift(scenario: ShiftScenario) -> SampleStream:
    rng = np.random.default_rng(scenario.seed)
    T, d = scenario.T, scenario.d
    X = rng.standard_normal((T, d))
    beta0 = rng.normal(0.0, 1.0 / math.sqrt(d), d)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    mu = jump_levels(scenario, rng)
    eps = rng.normal(0.0, scenario.noise, T) if scenario.noise > 0 else np.zeros(T)
    raw = np.einsum("td,td->t", X, beta0[None, :] + mu[:, None] * v[None, :]) + eps
    lo, hi = raw.min(), raw.max()
    y = (raw - lo) / (hi - lo) if hi > lo else np.full(T, 0.5)
    if scenario.raw_groups:
        # the coordinate itself, truncated to the [0, 1] codomain losses require
        fv = np.clip(X, 0.0, 1.0)
    else:
        fv = np.clip((X + 3.0) / 6.0, 0.0, 1.0)
    return SampleStream(
        y=np.clip(y, 0.0, 1.0),
        fvals=fv,
        group_ids=tuple(f"x{j + 1}" for j in range(d)),
        features=X,
        feature_names=tuple(f"x{j + 1}" for j in range(d)),
        meta={"dataset": "jump_shift", "setting": scenario.setting, "seed": scenario.seed,
              "mu": mu, "beta0": beta0, "direction": v, "y_min": lo, "y_max": hi},
    )
