"""Quantile forecasts and the stage-wise empirical distributions built from them.

A forecaster turns a history into a ``QuantileForecast`` (one row of
quantiles per horizon step).  Each row, together with a quantile weight
vector, defines a Dirac mixture ``EmpiricalDistribution`` that serves as the
center of a Wasserstein ambiguity ball.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import DataError
from .plant import solar_position

__all__ = [
    "VARIABLES",
    "QuantileGrid",
    "QuantileForecast",
    "EmpiricalDistribution",
    "quantile_weights",
    "empirical_distribution",
    "persistence_quantile_forecast",
    "clear_sky_irradiance",
    "clearness_backtransform",
    "Forecaster",
    "PersistenceForecaster",
    "PerfectForecaster",
    "BiasedForecaster",
]

VARIABLES = ("price", "temperature", "irradiance", "wind")
PERIOD = 24
K_MAX = 1.2


@dataclass(frozen=True)
class QuantileGrid:
    levels: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)

    def __post_init__(self):
        lv = tuple(float(q) for q in self.levels)
        if not lv:
            raise ValueError("quantile grid must not be empty")
        if any(not 0.0 < q < 1.0 for q in lv):
            raise ValueError(f"quantile levels must lie in (0, 1), got {lv}")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError(f"quantile levels must be strictly increasing, got {lv}")
        object.__setattr__(self, "levels", lv)

    def __len__(self):
        return len(self.levels)


@dataclass(frozen=True)
class QuantileForecast:
    """``values[h, i]`` is the ``levels[i]`` quantile of step ``h`` after
    ``issue_time``.  Crossing quantiles are repaired by sorting each row."""

    variable: str
    issue_time: object
    levels: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != len(self.levels):
            raise ValueError(f"forecast values must be H x {len(self.levels)}, got {v.shape}")
        v.sort(axis=1)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "levels", tuple(float(q) for q in self.levels))

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    def distributions(self, weights) -> list:
        return [empirical_distribution(row, weights) for row in self.values]

    def point(self, weights) -> np.ndarray:
        """Per-step mean of the empirical distributions."""
        return np.array([d.mean for d in self.distributions(weights)])


@dataclass(frozen=True)
class EmpiricalDistribution:
    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        s = np.array(self.support, dtype=float).ravel()
        w = np.array(self.weights, dtype=float).ravel()
        if s.shape != w.shape or s.size == 0:
            raise ValueError(f"support and weights must be non-empty and equally long, "
                             f"got {s.size} and {w.size}")
        if not np.all(np.isfinite(s)):
            raise ValueError("support must be finite")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
        order = np.argsort(s, kind="stable")
        s, w = s[order], w[order]
        s.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "weights", w)

    @property
    def mean(self) -> float:
        # offset form returns the atom exactly for degenerate (constant) supports
        s0 = self.support[0]
        return float(s0 + np.dot(self.weights, self.support - s0))

    def expectation(self, f) -> float:
        return float(sum(wi * f(si) for si, wi in zip(self.support, self.weights)))

    @classmethod
    def dirac(cls, value: float) -> "EmpiricalDistribution":
        return cls(np.array([value]), np.array([1.0]))


def quantile_weights(scheme: str, m: int) -> np.ndarray:
    """Probability weights for ``m`` quantile levels.

    ``"uniform"`` gives ``1/m`` each; ``"triangular"`` gives the symmetric
    integer ramp ``ceil(m/2) - |i - (m+1)/2|`` (``i`` 1-based), normalized.
    """
    if m < 1:
        raise ValueError(f"need at least one quantile level, got m={m}")
    if scheme == "uniform":
        return np.full(m, 1.0 / m)
    if scheme == "triangular":
        i = np.arange(1, m + 1)
        raw = math.ceil(m / 2) - np.abs(i - (m + 1) / 2.0)
        return raw / raw.sum()
    raise ValueError(f"unknown weight scheme {scheme!r}; expected 'uniform' or 'triangular'")


def empirical_distribution(row, w) -> EmpiricalDistribution:
    row = np.asarray(row, dtype=float)
    w = np.asarray(w, dtype=float)
    if row.shape != w.shape:
        raise ValueError(f"quantile row has {row.size} values but {w.size} weights")
    return EmpiricalDistribution(row, w)


def persistence_quantile_forecast(history, horizon: int = 24, grid: QuantileGrid = QuantileGrid(),
                                  lookback: int = 10, issue_time=None, variable: str = "",
                                  lower: float | None = None) -> QuantileForecast:
    """Daily-persistence point forecast with empirical residual quantiles.

    The point forecast for step ``h`` repeats the value 24 h earlier.  The
    quantile offsets are empirical quantiles of the 24 h persistence errors
    seen in the ``lookback`` days before issue, pooled per step of horizon.
    ``history`` must end just before the first forecast step.
    """
    y = np.asarray(history, dtype=float)
    n = y.size
    need = (lookback + 1) * PERIOD
    if lookback < 1 or n < need:
        raise DataError(f"persistence forecast needs {need} hourly values of history, got {n}")
    levels = np.asarray(grid.levels)
    values = np.empty((horizon, levels.size))
    d = np.arange(1, lookback + 1)
    for h in range(horizon):
        hh = h % PERIOD
        point = y[n - PERIOD + hh]
        s = n + hh - PERIOD * d
        resid = y[s] - y[s - PERIOD]
        values[h] = point + np.quantile(resid, levels)
    if lower is not None:
        np.maximum(values, lower, out=values)
    return QuantileForecast(variable, issue_time, grid.levels, values)


def clear_sky_irradiance(timestamp, location) -> float:
    """Haurwitz clear-sky global horizontal irradiance in W/m^2."""
    lat, lon = location
    el, _ = solar_position(timestamp, lat, lon)
    if el <= 0:
        return 0.0
    s = math.sin(math.radians(el))
    return 1098.0 * s * math.exp(-0.057 / s)


def clearness_backtransform(k_quantiles, I_cs: float) -> np.ndarray:
    """Irradiance quantiles from clearness-index quantiles (k clamped to [0, 1.2])."""
    k = np.clip(np.asarray(k_quantiles, dtype=float), 0.0, K_MAX)
    return k * max(float(I_cs), 0.0)


def clearness_index(I, I_cs) -> np.ndarray:
    I = np.asarray(I, dtype=float)
    I_cs = np.asarray(I_cs, dtype=float)
    k = np.zeros(np.broadcast(I, I_cs).shape)
    day = I_cs > 0
    np.divide(I, I_cs, out=k, where=day)
    return np.clip(k, 0.0, K_MAX)


class Forecaster(Protocol):
    """Anything that issues per-variable quantile forecasts.

    ``values`` is the full hourly series of ``variable`` and ``timestamps``
    its time axis; a causal forecaster reads only ``values[:issue_index]``.
    """

    grid: QuantileGrid

    def forecast(self, variable: str, timestamps: Sequence, values: np.ndarray,
                 issue_index: int, horizon: int) -> QuantileForecast:
        ...


class PersistenceForecaster:
    """Causal baseline: seasonal persistence with residual quantiles.

    Irradiance is forecast in clearness-index space and back-transformed
    with the clear-sky irradiance of each target hour.
    """

    def __init__(self, grid: QuantileGrid = QuantileGrid(), lookback_days: int = 10,
                 location=(59.91, 10.75)):
        self.grid = grid
        self.lookback_days = lookback_days
        self.location = tuple(location)
        self._cs_cache: dict = {}

    def _clear_sky(self, timestamps, lo, hi):
        out = np.empty(hi - lo)
        for j, i in enumerate(range(lo, hi)):
            ts = timestamps[i]
            v = self._cs_cache.get(ts)
            if v is None:
                v = self._cs_cache[ts] = clear_sky_irradiance(ts, self.location)
            out[j] = v
        return out

    def forecast(self, variable, timestamps, values, issue_index, horizon):
        start = issue_index - (self.lookback_days + 1) * PERIOD
        if start < 0:
            raise DataError(f"{variable}: forecast issued at index {issue_index} needs "
                            f"{(self.lookback_days + 1) * PERIOD} hours of history")
        issue_time = timestamps[issue_index] if issue_index < len(timestamps) else None
        hist = np.asarray(values[start:issue_index], dtype=float)
        if variable == "irradiance":
            k = clearness_index(hist, self._clear_sky(timestamps, start, issue_index))
            kf = persistence_quantile_forecast(k, horizon, self.grid, self.lookback_days,
                                               issue_time, variable, lower=0.0)
            cs = self._clear_sky(timestamps, issue_index, issue_index + horizon)
            vals = np.array([clearness_backtransform(row, c) for row, c in zip(kf.values, cs)])
            return QuantileForecast(variable, issue_time, self.grid.levels, vals)
        lower = 0.0 if variable == "wind" else None
        return persistence_quantile_forecast(hist, horizon, self.grid, self.lookback_days,
                                             issue_time, variable, lower=lower)


class PerfectForecaster:
    """Oracle that places every quantile on the realized value."""

    def __init__(self, grid: QuantileGrid = QuantileGrid()):
        self.grid = grid

    def forecast(self, variable, timestamps, values, issue_index, horizon):
        truth = np.asarray(values[issue_index:issue_index + horizon], dtype=float)
        if truth.size != horizon:
            raise DataError(f"{variable}: series ends before index {issue_index + horizon}")
        vals = np.repeat(truth[:, None], len(self.grid), axis=1)
        return QuantileForecast(variable, timestamps[issue_index], self.grid.levels, vals)


@dataclass
class BiasedForecaster:
    """Wraps another forecaster and shifts selected variables by a constant."""

    base: object
    offsets: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.base.grid

    def forecast(self, variable, timestamps, values, issue_index, horizon):
        f = self.base.forecast(variable, timestamps, values, issue_index, horizon)
        off = self.offsets.get(variable, 0.0)
        if off == 0.0:
            return f
        return QuantileForecast(f.variable, f.issue_time, f.levels, f.values + off)
