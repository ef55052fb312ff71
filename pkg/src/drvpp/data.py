"""Scenario data: CSV ingestion, synthetic generation and result serialization.

CSV schemas (timestamps ISO-8601 UTC, hourly, no gaps)::

    weather:   timestamp,t2m_c,ghi_wm2,wind_ms
    prices:    timestamp,price_eur_kwh
    quantiles: issue_time,target_time,variable,q0.1,...,q0.9

Numbers are written with 9 significant digits.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import DataError
from .forecast import VARIABLES, QuantileForecast, QuantileGrid, clear_sky_irradiance

log = logging.getLogger(__name__)

__all__ = [
    "Scenario",
    "load_scenario",
    "write_scenario",
    "synth_scenario",
    "write_results",
    "summary_rows",
    "load_quantile_forecasts",
    "write_quantile_forecasts",
    "ExternalQuantileForecaster",
    "format_timestamp",
    "parse_timestamp",
]

WEATHER_COLUMNS = ("timestamp", "t2m_c", "ghi_wm2", "wind_ms")
PRICE_COLUMNS = ("timestamp", "price_eur_kwh")
HOUR = np.timedelta64(3600, "s")
OSLO = (59.91, 10.75)

_FIELD_OF = {"temperature": "t2m", "irradiance": "ghi", "wind": "wind", "price": "price"}


def parse_timestamp(text: str) -> np.datetime64:
    s = text.strip()
    if s.endswith("Z") or s.endswith("z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return np.datetime64(dt, "s")


def format_timestamp(ts) -> str:
    return str(np.datetime64(ts, "s")) + "Z"


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def _round9(a) -> np.ndarray:
    return np.array([float(_fmt(v)) for v in np.asarray(a, dtype=float)])


@dataclass(frozen=True)
class Scenario:
    """Hourly, gap-free, aligned weather and price series."""

    timestamps: np.ndarray
    t2m: np.ndarray
    ghi: np.ndarray
    wind: np.ndarray
    price: np.ndarray
    location: tuple = OSLO
    name: str = ""

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[s]")
        n = ts.size
        arrays = {}
        for f in ("t2m", "ghi", "wind", "price"):
            a = np.array(getattr(self, f), dtype=float)
            if a.shape != (n,):
                raise DataError(f"{f} has {a.size} values for {n} timestamps")
            arrays[f] = a
        if n > 1:
            step = np.diff(ts)
            bad = np.flatnonzero(step != HOUR)
            if bad.size:
                i = int(bad[0])
                raise DataError(f"timestamps not hourly at {format_timestamp(ts[i + 1])} "
                                f"(previous {format_timestamp(ts[i])})")
        if np.any(arrays["ghi"] < 0):
            raise DataError("irradiance must be >= 0")
        if np.any(arrays["wind"] < 0):
            raise DataError("wind speed must be >= 0")
        for a in (ts, *arrays.values()):
            a.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        for f, a in arrays.items():
            object.__setattr__(self, f, a)
        object.__setattr__(self, "location", tuple(float(v) for v in self.location))

    def __len__(self):
        return self.timestamps.size

    def series(self, variable: str) -> np.ndarray:
        try:
            return getattr(self, _FIELD_OF[variable])
        except KeyError:
            raise ValueError(f"unknown variable {variable!r}; expected one of {VARIABLES}") from None

    def check_window(self, start: int, stop: int):
        """Raise naming the first timestamp in ``[start, stop)`` that is missing or not finite."""
        if start < 0:
            raise DataError(f"window starts {-start} hours before the first timestamp "
                            f"{format_timestamp(self.timestamps[0])}")
        if stop > len(self):
            missing = self.timestamps[-1] + HOUR
            raise DataError(f"scenario ends at {format_timestamp(self.timestamps[-1])}; "
                            f"missing data from {format_timestamp(missing)} "
                            f"({stop - len(self)} hours short)")
        for f in ("t2m", "ghi", "wind", "price"):
            a = getattr(self, f)[start:stop]
            bad = np.flatnonzero(~np.isfinite(a))
            if bad.size:
                raise DataError(f"missing {f} value at {format_timestamp(self.timestamps[start + bad[0]])}")


# ---------------------------------------------------------------------------
# CSV ingestion


def _read_csv(path, columns):
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot open {path}: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}; "
                            f"expected header {','.join(columns)}")
        idx = [header.index(c) for c in columns]
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                vals = [rec[i] for i in idx]
            except IndexError:
                raise DataError(f"{path}: row {lineno} has {len(rec)} fields, "
                                f"expected {len(header)}") from None
            rows.append((lineno, vals))
    return rows


def _parse_series(path, rows, columns):
    ts, cols = [], [[] for _ in columns[1:]]
    for lineno, vals in rows:
        try:
            t = parse_timestamp(vals[0])
        except ValueError:
            raise DataError(f"{path}: row {lineno}: bad timestamp {vals[0]!r}") from None
        for j, c in enumerate(columns[1:], start=1):
            try:
                v = float(vals[j])
            except ValueError:
                raise DataError(f"{path}: row {lineno}: bad {c} value {vals[j]!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {lineno}: missing {c} value at {vals[0].strip()}")
            cols[j - 1].append(v)
        if ts:
            if t == ts[-1]:
                raise DataError(f"{path}: row {lineno}: duplicated timestamp {format_timestamp(t)}")
            if t < ts[-1]:
                raise DataError(f"{path}: row {lineno}: timestamp {format_timestamp(t)} is not after "
                                f"{format_timestamp(ts[-1])}")
            if t - ts[-1] != HOUR:
                raise DataError(f"{path}: row {lineno}: gap before {format_timestamp(t)}; missing "
                                f"{format_timestamp(ts[-1] + HOUR)}")
        ts.append(t)
    if not ts:
        raise DataError(f"{path}: no data rows")
    return np.array(ts, dtype="datetime64[s]"), [np.array(c) for c in cols]


def load_scenario(weather_path, price_path, location=OSLO, name: str = "") -> Scenario:
    """Load and align weather and price CSVs over their common span."""
    wts, (t2m, ghi, wind) = _parse_series(weather_path, _read_csv(weather_path, WEATHER_COLUMNS),
                                          WEATHER_COLUMNS)
    pts, (price,) = _parse_series(price_path, _read_csv(price_path, PRICE_COLUMNS), PRICE_COLUMNS)
    neg = np.flatnonzero(ghi < 0)
    if neg.size:
        log.warning("%s: clamped %d negative irradiance value(s) to 0 (first at %s, %g W/m2)",
                    weather_path, neg.size, format_timestamp(wts[neg[0]]), ghi[neg[0]])
        ghi = np.maximum(ghi, 0.0)
    neg = np.flatnonzero(wind < 0)
    if neg.size:
        raise DataError(f"{weather_path}: negative wind speed at {format_timestamp(wts[neg[0]])}")
    start, stop = max(wts[0], pts[0]), min(wts[-1], pts[-1])
    if stop < start:
        raise DataError(f"weather ({format_timestamp(wts[0])}..{format_timestamp(wts[-1])}) and prices "
                        f"({format_timestamp(pts[0])}..{format_timestamp(pts[-1])}) do not overlap")
    wi = slice(int((start - wts[0]) // HOUR), int((stop - wts[0]) // HOUR) + 1)
    pi = slice(int((start - pts[0]) // HOUR), int((stop - pts[0]) // HOUR) + 1)
    return Scenario(wts[wi], t2m[wi], ghi[wi], wind[wi], price[pi], location=location,
                    name=name or Path(weather_path).stem)


def write_scenario(sc: Scenario, weather_path, price_path):
    with Path(weather_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(WEATHER_COLUMNS)
        for t, a, b, c in zip(sc.timestamps, sc.t2m, sc.ghi, sc.wind):
            w.writerow([format_timestamp(t), _fmt(a), _fmt(b), _fmt(c)])
    with Path(price_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRICE_COLUMNS)
        for t, p in zip(sc.timestamps, sc.price):
            w.writerow([format_timestamp(t), _fmt(p)])


# ---------------------------------------------------------------------------
# synthetic scenarios


@dataclass(frozen=True)
class _Profile:
    start: str
    t_mean: float
    t_amp: float
    t_drift: float
    k_mean: float
    wind_mean: float
    wind_sd: float
    price_base: float
    price_morning: float
    price_evening: float
    price_day_sd: float
    price_hour_sd: float


PROFILES = {
    # simulation anchor dates; the generated series begin 11 days earlier
    "spring": _Profile("2024-04-15", 8.0, 5.0, 0.15, 0.55, 4.5, 2.0,
                       0.045, 0.030, 0.045, 0.012, 0.008),
    "autumn": _Profile("2024-10-01", 5.0, 3.0, -0.15, 0.40, 5.5, 2.3,
                       0.050, 0.015, 0.025, 0.008, 0.005),
}
SYNTH_LEAD_DAYS = 11


def _ar1(rng, n, phi, sd):
    e = rng.standard_normal(n) * sd * math.sqrt(1.0 - phi * phi)
    out = np.empty(n)
    prev = rng.standard_normal() * sd
    for i in range(n):
        prev = phi * prev + e[i]
        out[i] = prev
    return out


def synth_scenario(seed: int, days: int, profile: str = "spring", location=OSLO,
                   start: str | None = None, lead_days: int = SYNTH_LEAD_DAYS) -> Scenario:
    """Deterministic synthetic weather and price series.

    Temperature is a daily sinusoid with synoptic AR(1) anomalies,
    irradiance is Haurwitz clear-sky times an AR(1) clearness index, wind
    speed is AR(1) around the profile mean and the price is a morning and
    evening double peak over a day-level AR(1) base with hourly noise.  The
    series starts ``lead_days`` before the profile's anchor date.
    """
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; expected one of {', '.join(PROFILES)}")
    if days < 1:
        raise ValueError(f"days must be >= 1, got {days}")
    pr = PROFILES[profile]
    rng = np.random.default_rng(seed)
    n = 24 * days
    if start is None:
        t0 = np.datetime64(pr.start, "s") - np.timedelta64(lead_days, "D")
    else:
        t0 = np.datetime64(start, "s")
    ts = t0 + np.arange(n) * HOUR
    hours = np.arange(n) % 24
    day = np.arange(n) / 24.0

    t2m = (pr.t_mean + pr.t_drift * (day - days / 2.0)
           + pr.t_amp * np.sin(2 * np.pi * (hours - 9) / 24.0)
           + _ar1(rng, n, 0.97, 2.0) + 0.3 * rng.standard_normal(n))

    k_day = np.repeat(_ar1(rng, days, 0.6, 0.2), 24)
    k = np.clip(pr.k_mean + k_day + _ar1(rng, n, 0.8, 0.1), 0.05, 1.0)
    cs = np.array([clear_sky_irradiance(t, location) for t in ts.astype(datetime)])
    ghi = k * cs

    wind = np.clip(pr.wind_mean + _ar1(rng, n, 0.93, pr.wind_sd), 0.0, 15.0)

    shape = (pr.price_morning * np.exp(-0.5 * ((hours - 8) / 1.5) ** 2)
             + pr.price_evening * np.exp(-0.5 * ((hours - 18) / 2.0) ** 2))
    level = np.repeat(_ar1(rng, days, 0.7, pr.price_day_sd), 24)
    price = pr.price_base + level + shape + pr.price_hour_sd * rng.standard_normal(n)
    price = np.maximum(price, 0.002)

    return Scenario(ts, _round9(t2m), _round9(ghi), _round9(wind), _round9(price),
                    location=location, name=f"synth-{profile}-{seed}")


# ---------------------------------------------------------------------------
# external quantile forecasts


def _qcol(q):
    return f"q{q:g}"


def write_quantile_forecasts(path, forecasts, timestamps_of=None):
    """Write ``QuantileForecast`` objects (all on one grid) to CSV."""
    forecasts = list(forecasts)
    if not forecasts:
        raise ValueError("no forecasts to write")
    levels = forecasts[0].levels
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["issue_time", "target_time", "variable", *map(_qcol, levels)])
        for f in forecasts:
            if f.levels != levels:
                raise ValueError("all forecasts must share one quantile grid")
            t0 = np.datetime64(f.issue_time, "s")
            for h, row in enumerate(f.values):
                w.writerow([format_timestamp(t0), format_timestamp(t0 + h * HOUR), f.variable,
                            *map(_fmt, row)])


def load_quantile_forecasts(path) -> dict:
    """Read a quantile CSV into ``{(variable, issue_time): QuantileForecast}``."""
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot open {path}: {exc.strerror or exc}") from exc
    groups: dict = {}
    with fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header[:3] != ["issue_time", "target_time", "variable"] or len(header) < 4:
            raise DataError(f"{path}: header must start with issue_time,target_time,variable "
                            f"followed by quantile columns q<level>")
        try:
            levels = tuple(float(h[1:]) for h in header[3:] if h.startswith("q"))
        except ValueError:
            raise DataError(f"{path}: bad quantile column in {header[3:]}") from None
        if len(levels) != len(header) - 3:
            raise DataError(f"{path}: quantile columns must be named q<level>")
        grid = QuantileGrid(levels)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                issue, target = parse_timestamp(rec[0]), parse_timestamp(rec[1])
                var = rec[2].strip()
                vals = [float(v) for v in rec[3:3 + len(levels)]]
            except (ValueError, IndexError):
                raise DataError(f"{path}: row {lineno}: malformed record") from None
            if var not in VARIABLES:
                raise DataError(f"{path}: row {lineno}: unknown variable {var!r}")
            if len(vals) != len(levels) or not all(map(math.isfinite, vals)):
                raise DataError(f"{path}: row {lineno}: expected {len(levels)} finite quantiles")
            groups.setdefault((var, issue), []).append((target, lineno, vals))
    out = {}
    for (var, issue), rows in groups.items():
        rows.sort(key=lambda r: r[0])
        for h, (target, lineno, _) in enumerate(rows):
            if target != issue + h * HOUR:
                raise DataError(f"{path}: row {lineno}: {var} forecast issued {format_timestamp(issue)} "
                                f"expected target {format_timestamp(issue + h * HOUR)}")
        out[(var, issue)] = QuantileForecast(var, issue, grid.levels, [r[2] for r in rows])
    return out


class ExternalQuantileForecaster:
    """Serves precomputed quantile forecasts (e.g. from a neural forecaster).

    Variables absent from the table fall back to ``fallback`` when given.
    """

    def __init__(self, table: dict, fallback=None):
        self.table = table
        self.fallback = fallback
        levels = {f.levels for f in table.values()}
        if len(levels) > 1:
            raise DataError("external forecasts use more than one quantile grid")
        self.grid = QuantileGrid(levels.pop()) if levels else fallback.grid
        self._vars = {v for v, _ in table}

    @classmethod
    def from_csv(cls, path, fallback=None):
        return cls(load_quantile_forecasts(path), fallback)

    def forecast(self, variable, timestamps, values, issue_index, horizon):
        if variable not in self._vars and self.fallback is not None:
            return self.fallback.forecast(variable, timestamps, values, issue_index, horizon)
        issue = np.datetime64(timestamps[issue_index], "s")
        f = self.table.get((variable, issue))
        if f is None:
            raise DataError(f"no external {variable} forecast issued at {format_timestamp(issue)}")
        if f.horizon < horizon:
            raise DataError(f"external {variable} forecast issued at {format_timestamp(issue)} covers "
                            f"{f.horizon} steps, need {horizon}")
        return QuantileForecast(variable, issue, f.levels, f.values[:horizon])


# ---------------------------------------------------------------------------
# results


def _eps_label(eps):
    return "" if eps is None else f"{eps:g}"


def summary_rows(runs) -> list:
    """Summary table rows from ``[(mode, log), ...]``; delta vs FC of the same regime."""
    fc_rev = {m.regime: lg.revenue() for m, lg in runs if m.kind == "fc"}
    rows = []
    for m, lg in runs:
        rev = lg.revenue()
        base = fc_rev.get(m.regime)
        if m.kind == "pf" or base is None:
            delta = None
        elif m.kind == "fc":
            delta = 0.0
        else:
            delta = 100.0 * (rev - base) / abs(base) if base != 0 else float("nan")
        rows.append({
            "controller": m.kind, "regime": m.regime, "epsilon": m.epsilon,
            "revenue_eur": rev, "delta_pct": delta,
            "comfort_cost": lg.comfort_cost(), "degradation_cost": lg.degradation_cost(),
            "max_comfort_violation_c": lg.max_comfort_violation(),
            "simultaneous_flow_steps": lg.simultaneous_flow_steps(), "steps": len(lg),
        })
    return rows


SUMMARY_COLUMNS = ("controller", "regime", "epsilon", "revenue_eur", "delta_pct", "comfort_cost",
                   "degradation_cost", "max_comfort_violation_c", "simultaneous_flow_steps", "steps")


def run_label(mode) -> str:
    eps = f"_eps{mode.epsilon:g}" if mode.epsilon is not None else ""
    return f"{mode.kind}{eps}_{mode.regime}"


def write_results(runs, summary_path, timeseries_dir) -> list:
    """Write the summary CSV and one time-series CSV per run.

    ``runs`` is a sequence of ``(ControllerMode, TrajectoryLog)``.  Returns
    the summary rows.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("no runs to write")
    rows = summary_rows(runs)
    summary_path = Path(summary_path)
    timeseries_dir = Path(timeseries_dir)
    timeseries_dir.mkdir(parents=True, exist_ok=True)
    with summary_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([r["controller"], r["regime"], _eps_label(r["epsilon"])]
                       + ["" if r[c] is None else (_fmt(r[c]) if isinstance(r[c], float) else r[c])
                          for c in SUMMARY_COLUMNS[3:]])
    for mode, lg in runs:
        path = timeseries_dir / f"timeseries_{run_label(mode)}.csv"
        cols = lg.columns
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for rec in lg.rows():
                w.writerow([format_timestamp(v) if c == "timestamp" else
                            (_fmt(v) if isinstance(v, float) else v) for c, v in zip(cols, rec)])
    return rows
