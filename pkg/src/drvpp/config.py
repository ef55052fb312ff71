"""Experiment configuration: defaults, flat key-value file format, validation.

The file format is one ``section.key = value`` assignment per line; ``#``
starts a comment, list values are comma separated.  Sections mirror the
parameter groups of the plant: ``building``, ``battery``, ``pv``, ``wind``,
``grid``, ``fleet``, plus ``control``, ``solver``, ``sim`` and
``experiment``.  Every key has a default, unknown keys are rejected.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ParameterError, ValidationError
from .plant import (BatteryParams, BuildingParams, FleetConfig, PriceParams, PvParams,
                    WindParams)

__all__ = ["ControlSettings", "ExperimentConfig", "build_config", "load_config", "parse_config_text",
           "format_table", "config_keys", "CONTROLLERS", "REGIMES"]

CONTROLLERS = ("pf", "fc", "dr")
REGIMES = ("full", "price-only")
PROFILES = ("spring", "autumn")
WEIGHT_SCHEMES = ("uniform", "triangular")


@dataclass(frozen=True)
class ControlSettings:
    horizon: int = 24
    w_T: float = 100.0
    slack_factor: float = 1e4
    grid_limit: float = 1e4
    weight_scheme: str = "triangular"
    terminal_soc: float | None = None
    eps_prim: float = 1e-6
    eps_dual: float = 1e-6
    max_iter: int = 50_000

    @property
    def slack_penalty(self) -> float:
        return self.slack_factor * self.w_T


@dataclass(frozen=True)
class ExperimentConfig:
    building: BuildingParams = field(default_factory=BuildingParams)
    battery: BatteryParams = field(default_factory=BatteryParams)
    pv: PvParams = field(default_factory=PvParams)
    wind: WindParams = field(default_factory=WindParams)
    prices: PriceParams = field(default_factory=PriceParams)
    fleet: FleetConfig = field(default_factory=FleetConfig)
    control: ControlSettings = field(default_factory=ControlSettings)
    tau: float = 1.0
    lookback_days: int = 10
    days: int = 30
    location: tuple = (59.91, 10.75)
    profile: str = "spring"
    controllers: tuple = CONTROLLERS
    epsilons: tuple = (0.25, 0.5, 1.0, 2.0)
    regime: str = "full"

    @property
    def fleet_battery(self) -> BatteryParams:
        return self.battery.scaled(self.fleet.N_b)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    def to_flat(self) -> dict:
        return {key: spec.get(self) for key, spec in _SPECS.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_flat(), indent=2, sort_keys=False)


# ---------------------------------------------------------------------------
# flat key table


@dataclass(frozen=True)
class _Key:
    kind: type
    get: object
    lo: float | None = None
    hi: float | None = None
    choices: tuple | None = None
    lo_open: bool = False
    hi_open: bool = False


def _attr(group, name):
    return lambda cfg: getattr(getattr(cfg, group), name)


def _top(name):
    return lambda cfg: getattr(cfg, name)


_SPECS: dict[str, _Key] = {}

for _name in ("C1", "C2", "Cz", "R", "hA", "COP"):
    _SPECS[f"building.{_name}"] = _Key(float, _attr("building", _name), lo=0.0, lo_open=True)
for _name in ("A_win", "Q_max", "R_up", "R_down"):
    _SPECS[f"building.{_name}"] = _Key(float, _attr("building", _name), lo=0.0)
for _name in ("alpha_win", "Tz_min", "Tz_max", "Tz_set"):
    _SPECS[f"building.{_name}"] = _Key(float, _attr("building", _name))

_SPECS.update({
    "battery.eta_ch": _Key(float, _attr("battery", "eta_ch"), 0.0, 1.0, lo_open=True),
    "battery.eta_dis": _Key(float, _attr("battery", "eta_dis"), 0.0, 1.0, lo_open=True),
    "battery.capacity": _Key(float, _attr("battery", "capacity"), 0.0, lo_open=True),
    "battery.soc_min": _Key(float, lambda c: c.battery.S_min / c.battery.capacity, 0.0, 1.0),
    "battery.soc_max": _Key(float, lambda c: c.battery.S_max / c.battery.capacity, 0.0, 1.0),
    "battery.P_ch_max": _Key(float, _attr("battery", "P_ch_max"), 0.0),
    "battery.P_dis_max": _Key(float, _attr("battery", "P_dis_max"), 0.0),
    "battery.c_deg": _Key(float, _attr("battery", "c_deg"), 0.0),
    "pv.eta_pv": _Key(float, _attr("pv", "eta_pv"), 0.0, 1.0, lo_open=True, hi_open=True),
    "pv.A_pv": _Key(float, _attr("pv", "A_pv"), 0.0, lo_open=True),
    "pv.gamma_T": _Key(float, _attr("pv", "gamma_T"), 0.0),
    "pv.k_T": _Key(float, _attr("pv", "k_T"), 0.0),
    "pv.T_ref": _Key(float, _attr("pv", "T_ref")),
    "wind.rho_air": _Key(float, _attr("wind", "rho_air"), 0.0, lo_open=True),
    "wind.r_b": _Key(float, _attr("wind", "r_b"), 0.0, lo_open=True),
    "wind.eta_wind": _Key(float, _attr("wind", "eta_wind"), 0.0, 16.0 / 27.0, lo_open=True, hi_open=True),
    "grid.delta_s": _Key(float, _attr("prices", "delta_s"), 0.0, lo_open=True),
    "grid.beta_sell": _Key(float, _attr("prices", "beta_sell"), 0.0, 1.0, lo_open=True, hi_open=True),
    "grid.limit_kw": _Key(float, _attr("control", "grid_limit"), 0.0, lo_open=True),
    "fleet.N_h": _Key(int, _attr("fleet", "N_h"), 0),
    "fleet.N_b": _Key(int, _attr("fleet", "N_b"), 0),
    "fleet.N_s": _Key(int, _attr("fleet", "N_s"), 0),
    "fleet.N_w": _Key(int, _attr("fleet", "N_w"), 0),
    "control.horizon": _Key(int, _attr("control", "horizon"), 1),
    "control.w_T": _Key(float, _attr("control", "w_T"), 0.0),
    "control.slack_factor": _Key(float, _attr("control", "slack_factor"), 0.0, lo_open=True),
    "control.weight_scheme": _Key(str, _attr("control", "weight_scheme"), choices=WEIGHT_SCHEMES),
    "control.terminal_soc": _Key(float, _attr("control", "terminal_soc"), 0.0, 1.0),
    "solver.eps_prim": _Key(float, _attr("control", "eps_prim"), 0.0, lo_open=True),
    "solver.eps_dual": _Key(float, _attr("control", "eps_dual"), 0.0, lo_open=True),
    "solver.max_iter": _Key(int, _attr("control", "max_iter"), 1),
    "sim.tau": _Key(float, _top("tau"), 0.0, lo_open=True),
    "sim.lookback_days": _Key(int, _top("lookback_days"), 1),
    "sim.days": _Key(int, _top("days"), 1),
    "sim.lat": _Key(float, lambda c: c.location[0], -90.0, 90.0),
    "sim.lon": _Key(float, lambda c: c.location[1], -180.0, 180.0),
    "sim.profile": _Key(str, _top("profile"), choices=PROFILES),
    "experiment.controllers": _Key(list, _top("controllers"), choices=CONTROLLERS),
    "experiment.epsilons": _Key(list, _top("epsilons"), lo=0.0),
    "experiment.regime": _Key(str, _top("regime"), choices=REGIMES),
})


def _bad(key, msg):
    return ValidationError(f"{key}: {msg}")


def _parse_number(key, text, kind):
    try:
        v = float(text)
    except ValueError:
        raise _bad(key, f"expected a number, got {text!r}") from None
    if not math.isfinite(v):
        raise _bad(key, f"value must be finite, got {text!r}")
    if kind is int:
        if v != int(v):
            raise _bad(key, f"expected an integer, got {text!r}")
        return int(v)
    return v


def _check_range(key, spec, v):
    if spec.lo is not None and (v < spec.lo or (spec.lo_open and v == spec.lo)):
        raise _bad(key, f"value {v} violates lower bound {'>' if spec.lo_open else '>='} {spec.lo}")
    if spec.hi is not None and (v > spec.hi or (spec.hi_open and v == spec.hi)):
        raise _bad(key, f"value {v} violates upper bound {'<' if spec.hi_open else '<='} {spec.hi}")


def _coerce(key, raw):
    spec = _SPECS.get(key)
    if spec is None:
        raise _bad(key, "unknown configuration key")
    if raw is None:
        if key == "control.terminal_soc":
            return None
        raise _bad(key, "missing value")
    if spec.kind is list:
        items = raw if isinstance(raw, (list, tuple)) else [s for s in str(raw).split(",")]
        items = [str(s).strip() for s in items if str(s).strip()]
        if spec.choices:
            out = []
            for s in items:
                s = s.lower()
                if s not in spec.choices:
                    raise _bad(key, f"unknown entry {s!r}; expected one of {', '.join(spec.choices)}")
                out.append(s)
            if not out:
                raise _bad(key, "list must not be empty")
            return tuple(dict.fromkeys(out))
        vals = tuple(_parse_number(key, s, float) for s in items)
        for v in vals:
            _check_range(key, spec, v)
        return vals
    if spec.kind is str:
        s = str(raw).strip().lower()
        if key == "experiment.regime":
            s = s.replace("_", "-")
        if spec.choices and s not in spec.choices:
            raise _bad(key, f"value {raw!r} not in {', '.join(spec.choices)}")
        return s
    if isinstance(raw, str) and key == "control.terminal_soc" and raw.strip().lower() in ("", "none", "off"):
        return None
    v = _parse_number(key, raw, spec.kind) if isinstance(raw, str) else raw
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise _bad(key, f"expected a number, got {raw!r}")
    if spec.kind is int:
        if float(v) != int(v):
            raise _bad(key, f"expected an integer, got {raw!r}")
        v = int(v)
    else:
        v = float(v)
    _check_range(key, spec, v)
    return v


def parse_config_text(text: str) -> dict:
    """Parse the flat ``section.key = value`` format into a dict of raw strings."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected 'section.key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ValidationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def build_config(overrides: dict | None = None) -> ExperimentConfig:
    """Merge ``overrides`` (flat keys) into the defaults and validate everything."""
    flat = ExperimentConfig().to_flat()
    for key, raw in (overrides or {}).items():
        flat[key] = _coerce(key, raw)
    g = lambda section: {k.split(".", 1)[1]: v for k, v in flat.items() if k.startswith(section + ".")}
    try:
        building = BuildingParams(**g("building"))
        b = g("battery")
        cap = b.pop("capacity")
        smin, smax = b.pop("soc_min"), b.pop("soc_max")
        if not smin < smax:
            raise ValidationError(f"battery.soc_min ({smin}) must be < battery.soc_max ({smax})")
        battery = BatteryParams(S_min=smin * cap, S_max=smax * cap, capacity=cap, **b)
        pv = PvParams(**g("pv"))
        wind = WindParams(**g("wind"))
        grid = g("grid")
        prices = PriceParams(delta_s=grid["delta_s"], beta_sell=grid["beta_sell"])
        fleet = FleetConfig(**g("fleet"))
        c = g("control")
        s = g("solver")
        control = ControlSettings(horizon=c["horizon"], w_T=c["w_T"], slack_factor=c["slack_factor"],
                                  grid_limit=grid["limit_kw"], weight_scheme=c["weight_scheme"],
                                  terminal_soc=c["terminal_soc"], eps_prim=s["eps_prim"],
                                  eps_dual=s["eps_dual"], max_iter=s["max_iter"])
        sim = g("sim")
        exp = g("experiment")
        return ExperimentConfig(
            building=building, battery=battery, pv=pv, wind=wind, prices=prices, fleet=fleet,
            control=control, tau=sim["tau"], lookback_days=sim["lookback_days"], days=sim["days"],
            location=(sim["lat"], sim["lon"]), profile=sim["profile"],
            controllers=tuple(exp["controllers"]), epsilons=tuple(exp["epsilons"]),
            regime=exp["regime"],
        )
    except ParameterError as exc:
        raise ValidationError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    """Read a flat config file and merge it into the defaults."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return build_config(parse_config_text(text))


def config_keys() -> tuple:
    return tuple(_SPECS)


def format_table(cfg: ExperimentConfig) -> str:
    rows = cfg.to_flat()
    width = max(map(len, rows))
    lines = []
    for key, v in rows.items():
        if isinstance(v, tuple):
            v = ", ".join(f"{x:g}" if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            v = f"{v:g}"
        lines.append(f"{key:<{width}}  {v}")
    return "\n".join(lines)

