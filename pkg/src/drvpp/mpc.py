"""Receding-horizon controllers for the virtual power plant.

Three controllers share one convex QP:

* ``pf`` plans with the realized future (perfect forecasts),
* ``fc`` plans with the mean of each stage's empirical forecast distribution,
* ``dr`` adds the worst-case price term ``eps * |a_k|`` of a type-1
  Wasserstein ball around each stage's price distribution, written with
  epigraph variables ``t_k >= +-a_k``.

The ``N_h`` identical buildings are represented by one building whose
electrical load and comfort cost are multiplied by ``N_h``; the ``N_b``
batteries are one equivalent battery.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .config import ExperimentConfig
from .data import Scenario
from .dro import price_sensitivity
from .errors import DataError, SolverError
from .forecast import (EmpiricalDistribution, PersistenceForecaster, QuantileGrid,
                       quantile_weights)
from .plant import (BuildingState, battery_step, building_state_space, effective_prices,
                    grid_exchange, internal_gains, pv_power, solar_position, wind_power)
from .qp import QpProblem, QpSolution, QpSolver

__all__ = [
    "ControllerMode",
    "VppState",
    "ControlInput",
    "HorizonData",
    "MpcProblem",
    "TrajectoryLog",
    "MpcController",
    "assemble",
    "build_horizon",
    "initial_state",
    "simulate",
    "realized_revenue",
    "stage_revenue",
    "solar_geometry",
]

SIMULTANEOUS_TOL = 1e-6
BALANCE_TOL = 1e-9

U_NAMES = ("Qh", "Qc", "Pch", "Pdis", "Pimp", "Pexp", "slo", "shi")
X_NAMES = ("T1", "T2", "Tz", "S")


@dataclass(frozen=True)
class ControllerMode:
    kind: str
    epsilon: float | None = None
    regime: str = "full"

    def __post_init__(self):
        kind = self.kind.lower()
        regime = self.regime.lower().replace("_", "-")
        if kind not in ("pf", "fc", "dr"):
            raise ValueError(f"unknown controller {self.kind!r}; expected pf, fc or dr")
        if regime not in ("full", "price-only"):
            raise ValueError(f"unknown regime {self.regime!r}; expected full or price-only")
        if kind == "dr":
            if self.epsilon is None or not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
                raise ValueError(f"dr controller needs a finite epsilon >= 0, got {self.epsilon}")
        elif self.epsilon is not None:
            raise ValueError(f"epsilon is only meaningful for the dr controller, got {kind}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "regime", regime)
        if self.epsilon is not None:
            object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def label(self) -> str:
        eps = f"(eps={self.epsilon:g})" if self.epsilon is not None else ""
        return f"{self.kind.upper()}-MPC{eps} [{self.regime}]"


@dataclass(frozen=True)
class VppState:
    """Representative building state, aggregate SoC (kWh), last applied
    per-building HVAC power (kW) and the scenario index of the current hour."""

    building: BuildingState
    soc: float
    q_prev: float = 0.0
    index: int = 0


@dataclass(frozen=True)
class ControlInput:
    """Per-building HVAC split and fleet battery/grid powers (kW)."""

    q_heat: float
    q_cool: float
    p_ch: float
    p_dis: float
    p_imp: float
    p_exp: float

    @property
    def q_hvac(self) -> float:
        return self.q_heat - self.q_cool


@dataclass(frozen=True)
class HorizonData:
    """Exogenous inputs over the prediction horizon as the controller sees them."""

    price_dists: tuple
    price: np.ndarray
    T0: np.ndarray
    I_hor: np.ndarray
    wind: np.ndarray
    q_sol: np.ndarray
    q_ihg: np.ndarray
    p_ren: np.ndarray
    T_set: np.ndarray

    def __len__(self):
        return self.price.size


def solar_geometry(timestamps, location):
    lat, lon = location
    el = np.empty(len(timestamps))
    az = np.empty(len(timestamps))
    for i, ts in enumerate(timestamps):
        el[i], az[i] = solar_position(ts, lat, lon)
    return el, az


def _window_gains(cfg: ExperimentConfig, I_hor, el, az):
    b = cfg.building
    sin_p = np.maximum(0.0, np.sin(np.radians(el)))
    cos_p = np.maximum(0.0, np.cos(np.radians(az - b.alpha_win)))
    return np.asarray(I_hor) * b.A_win * sin_p * cos_p / 1000.0


def renewable_power(cfg: ExperimentConfig, I_hor, T0, wind):
    """Fleet renewable output (kW)."""
    f = cfg.fleet
    return f.N_s * pv_power(cfg.pv, I_hor, T0) + f.N_w * wind_power(cfg.wind, wind)


def make_horizon(cfg: ExperimentConfig, price_dists, T0, I_hor, wind, el, az, hours) -> HorizonData:
    price_dists = tuple(price_dists)
    T0 = np.asarray(T0, dtype=float)
    I_hor = np.maximum(np.asarray(I_hor, dtype=float), 0.0)
    wind = np.maximum(np.asarray(wind, dtype=float), 0.0)
    H = len(price_dists)
    if not (T0.size == I_hor.size == wind.size == H == len(hours)):
        raise ValueError("horizon arrays must all have the same length")
    return HorizonData(
        price_dists=price_dists,
        price=np.array([d.mean for d in price_dists]),
        T0=T0, I_hor=I_hor, wind=wind,
        q_sol=_window_gains(cfg, I_hor, np.asarray(el), np.asarray(az)),
        q_ihg=np.array([internal_gains(int(h)) for h in hours]),
        p_ren=np.asarray(renewable_power(cfg, I_hor, T0, wind), dtype=float).reshape(H),
        T_set=np.full(H, cfg.building.Tz_set),
    )


# ---------------------------------------------------------------------------
# QP assembly


@dataclass(frozen=True)
class _Layout:
    H: int
    var: dict
    nb: int
    row: dict
    mb: int

    def v(self, k, name):
        return k * self.nb + self.var[name]

    def r(self, k, name):
        return k * self.mb + self.row[name]


def _layout(H, robust):
    names = U_NAMES + X_NAMES + (("t",) if robust else ())
    rows = ("dyn0", "dyn1", "dyn2", "bat", "bal", "comf_lo", "comf_hi", "ramp",
            "box_Qh", "box_Qc", "box_Pch", "box_Pdis", "box_Pimp", "box_Pexp",
            "box_slo", "box_shi", "box_S") + (("dr_pos", "dr_neg") if robust else ())
    return _Layout(H, {n: i for i, n in enumerate(names)}, len(names),
                   {n: i for i, n in enumerate(rows)}, len(rows))


@dataclass(frozen=True)
class MpcProblem:
    qp: QpProblem
    layout: _Layout
    mode: ControllerMode
    objective_offset: float
    temperature_ref: float = 0.0

    @property
    def horizon(self) -> int:
        return self.layout.H

    def objective(self, x) -> float:
        return self.qp.objective(x) + self.objective_offset

    def values(self, x, name) -> np.ndarray:
        L = self.layout
        v = np.asarray(x)[[L.v(k, name) for k in range(L.H)]]
        return v + self.temperature_ref if name in ("T1", "T2", "Tz") else v

    def first_input(self, x) -> ControlInput:
        g = lambda n: float(x[self.layout.v(0, n)])
        return ControlInput(g("Qh"), g("Qc"), g("Pch"), g("Pdis"), g("Pimp"), g("Pexp"))

    def price_sensitivities(self, x, cfg: ExperimentConfig) -> np.ndarray:
        return price_sensitivity(self.values(x, "Pimp"), self.values(x, "Pexp"), cfg.tau,
                                 cfg.prices.delta_s, cfg.prices.beta_sell)


def assemble(state: VppState, horizon: HorizonData, mode: ControllerMode,
             cfg: ExperimentConfig) -> MpcProblem:
    """Assemble the finite-horizon QP for one receding-horizon step.

    Per step ``k`` the decision block is ``[Q_heat, Q_cool, P_ch, P_dis,
    P_imp, P_exp, s_lo, s_hi, T1, T2, Tz, S]`` (states at ``k+1``), plus the
    epigraph variable ``t_k`` for ``dr`` with ``eps > 0``.  At ``eps = 0``
    the epigraph is omitted so the problem coincides with ``fc``.
    """
    H = len(horizon)
    if H != cfg.control.horizon:
        raise ValueError(f"horizon data has {H} steps, config expects {cfg.control.horizon}")
    if not (len(horizon.price_dists) == horizon.T0.size == H):
        raise ValueError("inconsistent horizon data lengths")
    eps = mode.epsilon if mode.kind == "dr" else 0.0
    robust = eps > 0
    L = _layout(H, robust)
    n, m = L.nb * H, L.mb * H

    bld, ctl = cfg.building, cfg.control
    bat = cfg.fleet_battery
    Nh = cfg.fleet.N_h
    tau = cfg.tau
    dlt, beta = cfg.prices.delta_s, cfg.prices.beta_sell
    ss = building_state_space(bld, tau)
    Ad, Bd = ss.Ad, ss.Bd
    # temperatures enter the QP as deviations from the setpoint, which keeps
    # the linear comfort term (and the cost scaling) of the order of prices
    t_ref = bld.Tz_set
    x0 = state.building.as_array() - t_ref
    drift = (Ad.sum(axis=1) + Bd[:, 0] - 1.0) * t_ref

    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    l = np.empty(m)
    u = np.empty(m)
    q = np.zeros(n)
    Pdiag = np.zeros(n)
    load_coef = Nh / bld.COP
    w_comfort = Nh * ctl.w_T
    slack_cost = max(Nh, 1) * ctl.slack_penalty

    temps = ("T1", "T2", "Tz")
    for k in range(H):
        d = np.array([horizon.T0[k] - t_ref, horizon.q_sol[k], horizon.q_ihg[k]])
        # building dynamics
        for i in range(3):
            r = L.r(k, f"dyn{i}")
            put(r, L.v(k, temps[i]), 1.0)
            put(r, L.v(k, "Qh"), -Bd[i, 3])
            put(r, L.v(k, "Qc"), Bd[i, 3])
            rhs = Bd[i, :3] @ d + drift[i]
            if k == 0:
                rhs += Ad[i] @ x0
            else:
                for j in range(3):
                    if Ad[i, j] != 0.0:
                        put(r, L.v(k - 1, temps[j]), -Ad[i, j])
            l[r] = u[r] = rhs
        # battery
        r = L.r(k, "bat")
        put(r, L.v(k, "S"), 1.0)
        put(r, L.v(k, "Pch"), -bat.eta_ch * tau)
        put(r, L.v(k, "Pdis"), tau / bat.eta_dis)
        if k == 0:
            l[r] = u[r] = state.soc
        else:
            put(r, L.v(k - 1, "S"), -1.0)
            l[r] = u[r] = 0.0
        # power balance: P_imp - P_exp - P_load - P_bat = -P_ren
        r = L.r(k, "bal")
        put(r, L.v(k, "Qh"), -load_coef)
        put(r, L.v(k, "Qc"), -load_coef)
        put(r, L.v(k, "Pch"), -1.0)
        put(r, L.v(k, "Pdis"), 1.0)
        put(r, L.v(k, "Pimp"), 1.0)
        put(r, L.v(k, "Pexp"), -1.0)
        l[r] = u[r] = -horizon.p_ren[k]
        # soft comfort band
        r = L.r(k, "comf_lo")
        put(r, L.v(k, "Tz"), 1.0)
        put(r, L.v(k, "slo"), 1.0)
        l[r], u[r] = bld.Tz_min - t_ref, np.inf
        r = L.r(k, "comf_hi")
        put(r, L.v(k, "Tz"), 1.0)
        put(r, L.v(k, "shi"), -1.0)
        l[r], u[r] = -np.inf, bld.Tz_max - t_ref
        # HVAC ramp, anchored on the last applied input at k = 0
        r = L.r(k, "ramp")
        put(r, L.v(k, "Qh"), 1.0)
        put(r, L.v(k, "Qc"), -1.0)
        if k == 0:
            l[r], u[r] = state.q_prev - bld.R_down, state.q_prev + bld.R_up
        else:
            put(r, L.v(k - 1, "Qh"), -1.0)
            put(r, L.v(k - 1, "Qc"), 1.0)
            l[r], u[r] = -bld.R_down, bld.R_up
        # boxes
        for name, lo, hi in (("Qh", 0.0, bld.Q_max), ("Qc", 0.0, bld.Q_max),
                             ("Pch", 0.0, bat.P_ch_max), ("Pdis", 0.0, bat.P_dis_max),
                             ("Pimp", 0.0, ctl.grid_limit), ("Pexp", 0.0, ctl.grid_limit),
                             ("slo", 0.0, np.inf), ("shi", 0.0, np.inf),
                             ("S", bat.S_min, bat.S_max)):
            r = L.r(k, "box_" + name)
            put(r, L.v(k, name), 1.0)
            l[r], u[r] = lo, hi
        if ctl.terminal_soc is not None and k == H - 1:
            l[L.r(k, "box_S")] = max(bat.S_min, min(bat.S_max, ctl.terminal_soc * bat.capacity))
        # epigraph of |a_k|
        if robust:
            a_imp, a_exp = tau * (1.0 + dlt), -tau * beta
            for name, sgn in (("dr_pos", 1.0), ("dr_neg", -1.0)):
                r = L.r(k, name)
                put(r, L.v(k, "t"), 1.0)
                put(r, L.v(k, "Pimp"), -sgn * a_imp)
                put(r, L.v(k, "Pexp"), -sgn * a_exp)
                l[r], u[r] = 0.0, np.inf
            q[L.v(k, "t")] = eps

        # objective
        lam = horizon.price[k]
        buy, sell = effective_prices(lam, cfg.prices)
        q[L.v(k, "Pimp")] += tau * buy
        q[L.v(k, "Pexp")] -= tau * sell
        q[L.v(k, "Pch")] += bat.c_deg * tau
        q[L.v(k, "Pdis")] += bat.c_deg * tau
        Pdiag[L.v(k, "Tz")] = 2.0 * w_comfort
        q[L.v(k, "Tz")] -= 2.0 * w_comfort * (horizon.T_set[k] - t_ref)
        Pdiag[L.v(k, "slo")] = 2.0 * slack_cost
        Pdiag[L.v(k, "shi")] = 2.0 * slack_cost

    A = sp.csc_matrix((vals, (rows, cols)), shape=(m, n))
    offset = float(w_comfort * np.sum((horizon.T_set - t_ref) ** 2))
    names = tuple(f"{name}[{k}]" for k in range(H) for name in sorted(L.var, key=L.var.get))
    qp = QpProblem(sp.diags(Pdiag, format="csc"), q, A, l, u, names=names)
    return MpcProblem(qp, L, mode, offset, t_ref)


def _shift(vec, block, H):
    v = np.asarray(vec)
    if v.size != block * H:
        return None
    return np.concatenate([v[block:], v[-block:]])


# ---------------------------------------------------------------------------
# closed loop


def initial_state(cfg: ExperimentConfig, index: int = 0) -> VppState:
    bat = cfg.fleet_battery
    return VppState(BuildingState(20.0, 20.0, 20.0), 0.5 * (bat.S_min + bat.S_max), 0.0, index)


def build_horizon(scenario: Scenario, index: int, mode: ControllerMode, cfg: ExperimentConfig,
                  forecaster, geometry) -> HorizonData:
    """Exogenous horizon data for ``mode`` at scenario hour ``index``.

    ``pf`` sees the realized series; ``fc``/``dr`` see forecasts for the
    price and, in the full-uncertainty regime, for the weather as well.
    """
    H = cfg.control.horizon
    sl = slice(index, index + H)
    el, az = geometry[0][sl], geometry[1][sl]
    hours = (scenario.timestamps[sl].astype("datetime64[h]").astype(np.int64)) % 24
    if mode.kind == "pf":
        dists = [EmpiricalDistribution.dirac(p) for p in scenario.price[sl]]
        return make_horizon(cfg, dists, scenario.t2m[sl], scenario.ghi[sl], scenario.wind[sl],
                            el, az, hours)
    w = quantile_weights(cfg.control.weight_scheme, len(forecaster.grid))
    fc = lambda var: forecaster.forecast(var, scenario.timestamps, scenario.series(var), index, H)
    dists = fc("price").distributions(w)
    if mode.regime == "price-only":
        T0, I, v = scenario.t2m[sl], scenario.ghi[sl], scenario.wind[sl]
    else:
        T0 = fc("temperature").point(w)
        I = fc("irradiance").point(w)
        v = fc("wind").point(w)
    return make_horizon(cfg, dists, T0, I, v, el, az, hours)


class TrajectoryLog:
    """Closed-loop record, one row per applied step."""

    columns = (
        "timestamp", "price", "buy_price", "sell_price", "T0", "ghi", "wind", "p_ren",
        "q_heat", "q_cool", "q_hvac", "p_ch", "p_dis", "p_bat", "p_load", "p_grid", "p_imp",
        "p_exp", "plan_p_imp", "plan_p_exp", "price_sensitivity", "revenue", "comfort_cost",
        "degradation_cost", "T1", "T2", "Tz", "soc", "slack_low", "slack_high",
        "balance_residual", "simultaneous_flow", "clip_adjustment", "solver_iterations",
        "solver_r_prim", "solver_r_dual", "plan_objective",
    )

    def __init__(self, mode: ControllerMode | None = None, tau: float = 1.0):
        self.mode = mode
        self.tau = tau
        self._rows: list[tuple] = []

    def append(self, **rec):
        self._rows.append(tuple(rec[c] for c in self.columns))

    def __len__(self):
        return len(self._rows)

    def rows(self):
        return list(self._rows)

    def column(self, name) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self._rows])

    def revenue(self) -> float:
        return realized_revenue(self)

    def comfort_cost(self) -> float:
        return float(np.sum(self.column("comfort_cost"))) if self._rows else 0.0

    def degradation_cost(self) -> float:
        return float(np.sum(self.column("degradation_cost"))) if self._rows else 0.0

    def max_comfort_violation(self) -> float:
        if not self._rows:
            return 0.0
        return float(max(self.column("slack_low").max(), self.column("slack_high").max()))

    def simultaneous_flow_steps(self) -> int:
        return int(np.sum(self.column("simultaneous_flow"))) if self._rows else 0

    def numeric_equal(self, other: "TrajectoryLog") -> bool:
        """Bit-for-bit equality of every logged value."""
        return self._rows == other._rows


def stage_revenue(p_imp: float, p_exp: float, lam: float, prices, tau: float = 1.0) -> float:
    """Market revenue of one step at spot price ``lam``: ``tau*(sell*P_exp - buy*P_imp)`` (EUR)."""
    buy, sell = effective_prices(lam, prices)
    return tau * (sell * p_exp - buy * p_imp)


def realized_revenue(log: TrajectoryLog) -> float:
    """Market revenue ``sum tau*(sell*P_exp - buy*P_imp)`` at realized prices (EUR)."""
    if len(log) == 0:
        raise ValueError("empty trajectory log")
    return float(np.sum(log.column("revenue")))


def _apply_limits(u: ControlInput, state: VppState, cfg: ExperimentConfig):
    """Project the planned first input onto the exact operating limits.

    Returns the applied input and the largest correction made; corrections
    are of the order of the solver tolerance.
    """
    b = cfg.building
    bat = cfg.fleet_battery
    tau = cfg.tau
    q_lo = max(-b.Q_max, state.q_prev - b.R_down)
    q_hi = min(b.Q_max, state.q_prev + b.R_up)
    qh0, qc0 = max(u.q_heat, 0.0), max(u.q_cool, 0.0)
    net = min(max(qh0 - qc0, q_lo), q_hi)
    common = min(min(qh0, qc0), b.Q_max - abs(net))
    qh, qc = max(net, 0.0) + common, max(-net, 0.0) + common
    ch_hi = min(bat.P_ch_max, max(bat.S_max - state.soc, 0.0) / (bat.eta_ch * tau))
    dis_hi = min(bat.P_dis_max, max(state.soc - bat.S_min, 0.0) * bat.eta_dis / tau)
    pch = min(max(u.p_ch, 0.0), ch_hi)
    pdis = min(max(u.p_dis, 0.0), dis_hi)
    adj = max(abs(qh - u.q_heat), abs(qc - u.q_cool), abs(pch - u.p_ch), abs(pdis - u.p_dis))
    return ControlInput(qh, qc, pch, pdis, max(u.p_imp, 0.0), max(u.p_exp, 0.0)), adj


class MpcController:
    """One receding-horizon controller with its own warm-started QP solver."""

    def __init__(self, mode: ControllerMode, cfg: ExperimentConfig, forecaster=None,
                 solver: QpSolver | None = None):
        self.mode = mode
        self.cfg = cfg
        self.forecaster = forecaster
        if forecaster is None and mode.kind != "pf":
            self.forecaster = PersistenceForecaster(QuantileGrid(), cfg.lookback_days, cfg.location)
        c = cfg.control
        self.solver = solver or QpSolver(eps_prim=c.eps_prim, eps_dual=c.eps_dual, max_iter=c.max_iter)
        self._prev: QpSolution | None = None
        self._ss = building_state_space(cfg.building, cfg.tau)

    def plan(self, state: VppState, horizon: HorizonData):
        mp = assemble(state, horizon, self.mode, self.cfg)
        x0 = y0 = None
        if self._prev is not None:
            x0 = _shift(self._prev.x, mp.layout.nb, mp.horizon)
            y0 = _shift(self._prev.y, mp.layout.mb, mp.horizon)
            if x0 is None or y0 is None:
                x0 = y0 = None
        sol = self.solver.solve(mp.qp, x0=x0, y0=y0)
        if not sol.solved:
            raise SolverError(
                f"{self.mode.label}: QP not solved at scenario index {state.index}: status={sol.status}"
                f"{' (' + sol.certificate + ' infeasibility)' if sol.certificate else ''}, "
                f"r_prim={sol.primal_residual:.3g}, r_dual={sol.dual_residual:.3g}, "
                f"iterations={sol.iterations}", solution=sol)
        self._prev = sol
        return mp, sol

    def step(self, state: VppState, scenario: Scenario, geometry, log: TrajectoryLog | None = None):
        """Plan, apply the first input to the true plant and advance one hour.

        Returns ``(applied ControlInput, next VppState, diagnostics dict)``.
        """
        cfg = self.cfg
        t = state.index
        horizon = build_horizon(scenario, t, self.mode, cfg, self.forecaster, geometry)
        mp, sol = self.plan(state, horizon)
        planned = mp.first_input(sol.x)
        u, adj = _apply_limits(planned, state, cfg)

        # true plant with realized weather
        tau = cfg.tau
        bld = cfg.building
        bat = cfg.fleet_battery
        T0, ghi, v, lam = (float(scenario.t2m[t]), float(scenario.ghi[t]),
                           float(scenario.wind[t]), float(scenario.price[t]))
        el, az = geometry[0][t], geometry[1][t]
        hour = int(scenario.timestamps[t].astype("datetime64[h]").astype(np.int64) % 24)
        q_sol = float(_window_gains(cfg, ghi, el, az))
        d = np.array([T0, q_sol, internal_gains(hour), u.q_hvac])
        x_next = self._ss.Ad @ state.building.as_array() + self._ss.Bd @ d
        building = BuildingState.from_array(x_next)
        soc = battery_step(state.soc, u.p_ch, u.p_dis, bat, tau)
        soc_c = min(max(soc, bat.S_min), bat.S_max)
        adj = max(adj, abs(soc_c - soc))

        p_ren = float(renewable_power(cfg, ghi, T0, v))
        p_load = cfg.fleet.N_h * (u.q_heat + u.q_cool) / bld.COP
        p_bat = u.p_ch - u.p_dis
        p_grid = grid_exchange(p_ren, p_load, p_bat)
        p_exp, p_imp = max(p_grid, 0.0), max(-p_grid, 0.0)
        residual = abs(p_ren - p_load - p_bat - (p_exp - p_imp))
        if residual > BALANCE_TOL:
            raise AssertionError(f"power balance residual {residual:.3g} kW at index {t}")
        buy, sell = effective_prices(lam, cfg.prices)
        a_k = float(price_sensitivity(p_imp, p_exp, tau, cfg.prices.delta_s, cfg.prices.beta_sell))
        Tz = building.Tz
        simultaneous = (min(planned.p_imp, planned.p_exp) > SIMULTANEOUS_TOL
                        or min(u.p_ch, u.p_dis) > SIMULTANEOUS_TOL)
        diag = dict(
            timestamp=scenario.timestamps[t], price=lam, buy_price=buy, sell_price=sell,
            T0=T0, ghi=ghi, wind=v, p_ren=p_ren, q_heat=u.q_heat, q_cool=u.q_cool,
            q_hvac=u.q_hvac, p_ch=u.p_ch, p_dis=u.p_dis, p_bat=p_bat, p_load=p_load,
            p_grid=p_grid, p_imp=p_imp, p_exp=p_exp, plan_p_imp=planned.p_imp,
            plan_p_exp=planned.p_exp, price_sensitivity=a_k,
            revenue=stage_revenue(p_imp, p_exp, lam, cfg.prices, tau),
            comfort_cost=cfg.fleet.N_h * cfg.control.w_T * (Tz - bld.Tz_set) ** 2,
            degradation_cost=bat.c_deg * (u.p_ch + u.p_dis) * tau,
            T1=building.T1, T2=building.T2, Tz=Tz, soc=soc_c,
            slack_low=max(bld.Tz_min - Tz, 0.0), slack_high=max(Tz - bld.Tz_max, 0.0),
            balance_residual=residual, simultaneous_flow=int(simultaneous), clip_adjustment=adj,
            solver_iterations=sol.iterations, solver_r_prim=sol.primal_residual,
            solver_r_dual=sol.dual_residual, plan_objective=mp.objective(sol.x),
        )
        if log is not None:
            log.append(**diag)
        applied = ControlInput(u.q_heat, u.q_cool, u.p_ch, u.p_dis, p_imp, p_exp)
        return applied, VppState(building, soc_c, u.q_hvac, t + 1), diag


def simulation_window(scenario: Scenario, cfg: ExperimentConfig, days: int | None = None):
    """``(first index, number of steps)`` of the closed loop on ``scenario``."""
    days = cfg.days if days is None else days
    start = (cfg.lookback_days + 1) * 24
    steps = int(round(days * 24 / cfg.tau))
    return start, steps


def simulate(scenario: Scenario, mode: ControllerMode, cfg: ExperimentConfig, forecaster=None,
             days: int | None = None, geometry=None) -> TrajectoryLog:
    """Run the closed loop over ``days`` (default ``cfg.days``) and log every step.

    The loop starts after ``lookback_days + 1`` days of history so the
    forecaster has its lookback window, and needs one horizon of data past
    the last step.
    """
    if cfg.tau != 1.0:
        raise ValueError("the closed loop runs on hourly scenario data; sim.tau must be 1")
    start, steps = simulation_window(scenario, cfg, days)
    H = cfg.control.horizon
    try:
        scenario.check_window(0, start + steps + H - 1)
    except DataError as exc:
        raise DataError(f"{scenario.name or 'scenario'} too short for {steps} steps: {exc}") from None
    if geometry is None:
        geometry = solar_geometry(scenario.timestamps, scenario.location)
    ctl = MpcController(mode, cfg, forecaster)
    log = TrajectoryLog(mode, cfg.tau)
    state = initial_state(cfg, start)
    for _ in range(steps):
        _, state, _ = ctl.step(state, scenario, geometry, log)
    return log
