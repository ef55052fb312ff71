"""Physical plant equations of the virtual power plant.

Building thermal network (3R2C), its zero-order-hold discretization, battery
storage, PV and wind generation, solar geometry for window gains, the
instantaneous power balance and the effective grid prices.

Unit discipline: powers in kW, energies in kWh, temperatures in degC, prices
in EUR/kWh and the step ``tau`` in hours.  Irradiance enters as W/m^2 and is
converted to kW at this module's boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np
from scipy.linalg import expm

from .errors import ConstraintError, NumericError, ParameterError

__all__ = [
    "BuildingParams",
    "BuildingState",
    "StateSpace",
    "BatteryParams",
    "PvParams",
    "WindParams",
    "PriceParams",
    "FleetConfig",
    "building_continuous_matrices",
    "zoh_discretize",
    "building_state_space",
    "building_step",
    "solar_position",
    "solar_gains",
    "pv_power",
    "wind_power",
    "battery_step",
    "grid_exchange",
    "effective_prices",
    "internal_gains",
]

# input order of the building model
N_STATES = 3
N_INPUTS = 4
IDX_T0, IDX_QSOL, IDX_QIHG, IDX_QHVAC = range(N_INPUTS)

BETZ_LIMIT = 16.0 / 27.0


def _require(cond, msg, exc=ParameterError):
    if not cond:
        raise exc(msg)


@dataclass(frozen=True)
class BuildingParams:
    """Parameters of one residential building (3R2C thermal network + HVAC).

    Capacitances in kWh/degC, ``R`` in degC/kW, ``hA`` in kW/degC, window
    area in m^2, window azimuth in degrees clockwise from north, HVAC
    thermal limit in kW and ramp limits in kW/h.  ``Tz_set`` is a constant
    setpoint; per-step schedules are passed to the controller separately.
    """

    C1: float = 25.0
    C2: float = 80.0
    Cz: float = 3.0
    R: float = 2.0
    hA: float = 2.0
    A_win: float = 15.0
    alpha_win: float = 180.0
    COP: float = 3.0
    Q_max: float = 10.0
    R_up: float = 2.0
    R_down: float = 2.0
    Tz_min: float = 15.0
    Tz_max: float = 25.0
    Tz_set: float = 20.0

    def __post_init__(self):
        for name in ("C1", "C2", "Cz", "R", "hA", "COP"):
            _require(getattr(self, name) > 0, f"building.{name} must be > 0, got {getattr(self, name)}")
        _require(self.Q_max >= 0, f"building.Q_max must be >= 0, got {self.Q_max}")
        _require(self.R_up >= 0 and self.R_down >= 0, "building ramp limits must be >= 0")
        _require(self.A_win >= 0, f"building.A_win must be >= 0, got {self.A_win}")
        _require(self.Tz_min < self.Tz_max,
                 f"building.Tz_min ({self.Tz_min}) must be < Tz_max ({self.Tz_max})")


@dataclass(frozen=True)
class BuildingState:
    T1: float
    T2: float
    Tz: float

    def as_array(self) -> np.ndarray:
        return np.array([self.T1, self.T2, self.Tz], dtype=float)

    @classmethod
    def from_array(cls, x) -> "BuildingState":
        x = np.asarray(x, dtype=float)
        if x.shape != (N_STATES,):
            raise ValueError(f"building state must have shape (3,), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite building state {x}")
        return cls(float(x[0]), float(x[1]), float(x[2]))


@dataclass(frozen=True)
class StateSpace:
    """Continuous and ZOH-discretized building model, output ``y = C x = Tz``."""

    Ac: np.ndarray
    Bc: np.ndarray
    Ad: np.ndarray
    Bd: np.ndarray
    C: np.ndarray
    tau: float


@dataclass(frozen=True)
class BatteryParams:
    """A (possibly aggregated) battery.  SoC bounds and capacity in kWh."""

    eta_ch: float = 0.95
    eta_dis: float = 0.95
    S_min: float = 20.0
    S_max: float = 90.0
    P_ch_max: float = 20.0
    P_dis_max: float = 20.0
    c_deg: float = 0.01
    capacity: float = 100.0

    def __post_init__(self):
        _require(0 < self.eta_ch <= 1, f"battery.eta_ch must be in (0, 1], got {self.eta_ch}")
        _require(0 < self.eta_dis <= 1, f"battery.eta_dis must be in (0, 1], got {self.eta_dis}")
        _require(0 <= self.S_min < self.S_max <= self.capacity,
                 f"battery SoC bounds must satisfy 0 <= S_min < S_max <= capacity, "
                 f"got {self.S_min}, {self.S_max}, {self.capacity}")
        _require(self.P_ch_max >= 0 and self.P_dis_max >= 0, "battery power limits must be >= 0")
        _require(self.c_deg >= 0, f"battery.c_deg must be >= 0, got {self.c_deg}")

    def scaled(self, count: int) -> "BatteryParams":
        """Equivalent battery of ``count`` identical units."""
        return BatteryParams(
            eta_ch=self.eta_ch, eta_dis=self.eta_dis,
            S_min=self.S_min * count, S_max=self.S_max * count,
            P_ch_max=self.P_ch_max * count, P_dis_max=self.P_dis_max * count,
            c_deg=self.c_deg, capacity=self.capacity * count,
        )


@dataclass(frozen=True)
class PvParams:
    eta_pv: float = 0.18
    A_pv: float = 200.0
    gamma_T: float = 0.0045
    k_T: float = 0.03
    T_ref: float = 25.0

    def __post_init__(self):
        _require(0 < self.eta_pv < 1, f"pv.eta_pv must be in (0, 1), got {self.eta_pv}")
        _require(self.A_pv > 0, f"pv.A_pv must be > 0, got {self.A_pv}")
        _require(self.gamma_T >= 0 and self.k_T >= 0, "pv.gamma_T and pv.k_T must be >= 0")


@dataclass(frozen=True)
class WindParams:
    rho_air: float = 1.225
    r_b: float = 15.0
    eta_wind: float = 0.45

    def __post_init__(self):
        _require(self.rho_air > 0 and self.r_b > 0 and self.eta_wind > 0,
                 "wind parameters must be > 0")
        _require(self.eta_wind < BETZ_LIMIT,
                 f"wind.eta_wind must be below the Betz limit {BETZ_LIMIT:.3f}, got {self.eta_wind}")


@dataclass(frozen=True)
class PriceParams:
    delta_s: float = 0.05
    beta_sell: float = 0.9

    def __post_init__(self):
        _require(self.delta_s > 0, f"grid.delta_s must be > 0, got {self.delta_s}")
        _require(0 < self.beta_sell < 1, f"grid.beta_sell must be in (0, 1), got {self.beta_sell}")


@dataclass(frozen=True)
class FleetConfig:
    N_h: int = 25
    N_b: int = 15
    N_s: int = 5
    N_w: int = 7

    def __post_init__(self):
        for name in ("N_h", "N_b", "N_s", "N_w"):
            v = getattr(self, name)
            _require(isinstance(v, (int, np.integer)) and not isinstance(v, bool) and v >= 0,
                     f"fleet.{name} must be a non-negative integer, got {v!r}")


# ---------------------------------------------------------------------------
# building thermal model


def building_continuous_matrices(p: BuildingParams):
    """Continuous-time 3R2C matrices.

    Returns ``(Ac, Bc, C)`` for the state ``[T1, T2, Tz]`` and the input
    ``[T0, q_sol*A, Q_ihg, Q_HVAC]``; ``C`` selects the zone temperature.
    """
    for name in ("C1", "C2", "Cz", "R"):
        if not getattr(p, name) > 0:
            raise ParameterError(f"{name} must be > 0")
    g = 1.0 / p.R
    Ac = np.array([
        [-(p.hA + g) / p.C1, g / p.C1, 0.0],
        [g / p.C2, -(p.hA + g) / p.C2, p.hA / p.C2],
        [0.0, p.hA / p.Cz, -p.hA / p.Cz],
    ])
    Bc = np.array([
        [p.hA / p.C1, 1.0 / p.C1, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0 / p.Cz, 1.0 / p.Cz],
    ])
    C = np.array([[0.0, 0.0, 1.0]])
    return Ac, Bc, C


def zoh_discretize(Ac, Bc, tau: float):
    """Zero-order-hold discretization via the augmented matrix exponential.

    ``expm([[Ac, Bc], [0, 0]] * tau) = [[Ad, Bd], [0, I]]``, which stays exact
    when ``Ac`` is singular.
    """
    if not tau > 0:
        raise ParameterError(f"tau must be > 0, got {tau}")
    Ac = np.atleast_2d(np.asarray(Ac, dtype=float))
    Bc = np.asarray(Bc, dtype=float)
    if Bc.ndim == 1:
        Bc = Bc.reshape(Ac.shape[0], -1)
    n, m = Ac.shape[0], Bc.shape[1]
    if Ac.shape != (n, n) or Bc.shape[0] != n:
        raise ValueError(f"inconsistent shapes Ac{Ac.shape}, Bc{Bc.shape}")
    M = np.zeros((n + m, n + m))
    M[:n, :n] = Ac
    M[:n, n:] = Bc
    E = expm(M * tau)
    Ad, Bd = E[:n, :n], E[:n, n:]
    if not (np.all(np.isfinite(Ad)) and np.all(np.isfinite(Bd))):
        raise NumericError("matrix exponential produced non-finite entries")
    return Ad, Bd


def building_state_space(p: BuildingParams, tau: float = 1.0) -> StateSpace:
    Ac, Bc, C = building_continuous_matrices(p)
    Ad, Bd = zoh_discretize(Ac, Bc, tau)
    return StateSpace(Ac=Ac, Bc=Bc, Ad=Ad, Bd=Bd, C=C, tau=tau)


def building_step(s: BuildingState, u, ss: StateSpace) -> BuildingState:
    """Advance one building by one step: ``x' = Ad x + Bd u``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (N_INPUTS,):
        raise ValueError(f"building input must have shape (4,), got {u.shape}")
    return BuildingState.from_array(ss.Ad @ s.as_array() + ss.Bd @ u)


# ---------------------------------------------------------------------------
# solar geometry and gains


def _as_utc(ts) -> datetime:
    if isinstance(ts, np.datetime64):
        ts = ts.astype("datetime64[us]").astype(datetime)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def solar_position(timestamp, lat: float, lon: float):
    """Solar elevation and azimuth (degrees) using the NOAA fractional-year
    approximation.

    Azimuth is measured clockwise from north in ``[0, 360)``.  Naive
    timestamps are interpreted as UTC.  Accuracy is a few tenths of a degree,
    without refraction correction.
    """
    ts = _as_utc(timestamp)
    doy = ts.timetuple().tm_yday
    hour = ts.hour + ts.minute / 60.0 + (ts.second + ts.microsecond * 1e-6) / 3600.0
    days_in_year = 366 if (ts.year % 4 == 0 and (ts.year % 100 != 0 or ts.year % 400 == 0)) else 365
    g = 2.0 * math.pi / days_in_year * (doy - 1 + (hour - 12.0) / 24.0)

    eqtime = 229.18 * (0.000075 + 0.001868 * math.cos(g) - 0.032077 * math.sin(g)
                       - 0.014615 * math.cos(2 * g) - 0.040849 * math.sin(2 * g))
    decl = (0.006918 - 0.399912 * math.cos(g) + 0.070257 * math.sin(g)
            - 0.006758 * math.cos(2 * g) + 0.000907 * math.sin(2 * g)
            - 0.002697 * math.cos(3 * g) + 0.00148 * math.sin(3 * g))

    true_solar_minutes = hour * 60.0 + eqtime + 4.0 * lon
    ha = math.radians(true_solar_minutes / 4.0 - 180.0)
    phi = math.radians(lat)

    cos_zen = math.sin(phi) * math.sin(decl) + math.cos(phi) * math.cos(decl) * math.cos(ha)
    cos_zen = min(1.0, max(-1.0, cos_zen))
    elevation = 90.0 - math.degrees(math.acos(cos_zen))

    az = math.degrees(math.atan2(math.sin(ha),
                                 math.cos(ha) * math.sin(phi) - math.tan(decl) * math.cos(phi))) + 180.0
    return elevation, az % 360.0


def solar_gains(I_hor: float, theta_el: float, theta_az: float, alpha_win: float, A_win: float) -> float:
    """Effective solar heat gain through the window in kW."""
    if I_hor < 0:
        raise ConstraintError(f"irradiance must be >= 0, got {I_hor}")
    sin_p = max(0.0, math.sin(math.radians(theta_el)))
    cos_p = max(0.0, math.cos(math.radians(theta_az - alpha_win)))
    return I_hor * A_win * sin_p * cos_p / 1000.0


# ---------------------------------------------------------------------------
# generation, storage, grid


def pv_power(p: PvParams, I_sol, T_air):
    """PV output in kW for one unit; temperature-derated, clamped at 0.

    Works elementwise on arrays.
    """
    I_sol = np.asarray(I_sol, dtype=float)
    if np.any(I_sol < 0):
        raise ConstraintError("irradiance must be >= 0")
    T_cell = np.asarray(T_air, dtype=float) + p.k_T * I_sol
    P = p.eta_pv * p.A_pv * I_sol * (1.0 - p.gamma_T * (T_cell - p.T_ref)) / 1000.0
    P = np.maximum(P, 0.0)
    return float(P) if P.ndim == 0 else P


def wind_power(p: WindParams, v):
    """Wind turbine output in kW (raw cubic law, no cut-in/cut-out)."""
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ConstraintError("wind speed must be >= 0")
    P = 0.5 * p.rho_air * math.pi * p.r_b ** 2 * p.eta_wind * v ** 3 / 1000.0
    return float(P) if P.ndim == 0 else P


def battery_step(S: float, P_ch: float, P_dis: float, p: BatteryParams, tau: float = 1.0) -> float:
    """Next state of charge in kWh."""
    if not 0 <= P_ch <= p.P_ch_max:
        raise ConstraintError(f"P_ch={P_ch} outside [0, {p.P_ch_max}]")
    if not 0 <= P_dis <= p.P_dis_max:
        raise ConstraintError(f"P_dis={P_dis} outside [0, {p.P_dis_max}]")
    return S + p.eta_ch * P_ch * tau - P_dis * tau / p.eta_dis


def grid_exchange(P_ren: float, P_load: float, P_bat: float) -> float:
    """Net grid exchange in kW; positive means export."""
    return P_ren - P_load - P_bat


def effective_prices(lam, p: PriceParams):
    """Return ``(buy, sell)`` prices for spot price ``lam``."""
    return (1.0 + p.delta_s) * lam, p.beta_sell * lam


_IHG_PROFILE = np.array([0.3] * 6 + [0.5] * 11 + [0.8] * 5 + [0.5] * 2)


def internal_gains(hour_of_day: int) -> float:
    """Deterministic internal heat gains (kW) for one building."""
    h = int(hour_of_day)
    if h != hour_of_day or not 0 <= h <= 23:
        raise ValueError(f"hour_of_day must be an integer in 0..23, got {hour_of_day}")
    return float(_IHG_PROFILE[h])
