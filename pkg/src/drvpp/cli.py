"""Command-line entry point.

``drvpp run`` simulates the requested controllers on file or synthetic
scenarios and writes a summary CSV plus one time-series CSV per run.
``drvpp validate`` resolves and prints a configuration.

Exit codes: 0 success, 1 solver/runtime failure, 2 usage or validation
error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__
from .config import (CONTROLLERS, PROFILES, REGIMES, ExperimentConfig, build_config,
                     format_table, parse_config_text)
from .data import ExternalQuantileForecaster, load_scenario, synth_scenario, write_results
from .errors import SolverError, ValidationError
from .forecast import PersistenceForecaster, QuantileGrid
from .mpc import ControllerMode, simulate

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, EXIT_IO = 0, 1, 2, 3


@dataclass(frozen=True)
class RunSpec:
    config: ExperimentConfig
    source: str
    controllers: tuple
    epsilons: tuple
    regime: str
    out: Path
    jobs: int = 1
    weather: Path | None = None
    prices: Path | None = None
    synth_seed: int | None = None
    forecasts: Path | None = None

    def modes(self) -> list:
        out = []
        for kind in self.controllers:
            if kind == "dr":
                out.extend(ControllerMode("dr", e, self.regime) for e in self.epsilons)
            else:
                out.append(ControllerMode(kind, None, self.regime))
        return out


def _csv_list(text, conv=str):
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    try:
        return tuple(conv(s) for s in items)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="drvpp", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate controllers and write results")
    run.add_argument("--config", type=Path, help="flat key = value override file")
    src = run.add_mutually_exclusive_group()
    src.add_argument("--synth", type=int, metavar="SEED", help="use a synthetic scenario")
    src.add_argument("--weather", type=Path, help="weather CSV (timestamp,t2m_c,ghi_wm2,wind_ms)")
    run.add_argument("--prices", type=Path, help="price CSV (timestamp,price_eur_kwh)")
    run.add_argument("--forecasts", type=Path, help="external quantile forecast CSV")
    run.add_argument("--profile", choices=PROFILES, help="synthetic profile (default from config)")
    run.add_argument("--days", type=int, help="closed-loop days (default from config)")
    run.add_argument("--controllers", type=lambda s: _csv_list(s, str.lower),
                     help="comma list of pf, fc, dr")
    run.add_argument("--epsilon", type=lambda s: _csv_list(s, float),
                     help="comma list of Wasserstein radii (EUR/kWh) for dr")
    run.add_argument("--regime", choices=REGIMES, help="uncertainty regime (default from config)")
    run.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    run.add_argument("--jobs", type=int, default=1, help="parallel runs (default 1)")

    val = sub.add_parser("validate", help="resolve and print a configuration")
    val.add_argument("--config", type=Path, help="flat key = value override file")
    val.add_argument("--format", choices=("text", "json"), default="text")
    return ap


def _read_overrides(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_config_text(text)


def make_spec(args, parser) -> RunSpec:
    overrides = _read_overrides(args.config)
    cfg = build_config(overrides)
    if args.days is not None:
        if args.days < 1:
            parser.error("--days must be >= 1")
        cfg = replace(cfg, days=args.days)
    if args.profile is not None:
        cfg = replace(cfg, profile=args.profile)
    controllers = args.controllers or cfg.controllers
    bad = [c for c in controllers if c not in CONTROLLERS]
    if bad:
        parser.error(f"unknown controller(s) {', '.join(bad)}; expected pf, fc, dr")
    controllers = tuple(dict.fromkeys(controllers))
    epsilons = args.epsilon
    if epsilons is None and "experiment.epsilons" in overrides:
        epsilons = cfg.epsilons
    if "dr" in controllers:
        if epsilons is None:
            parser.error("controller dr needs --epsilon (or experiment.epsilons in the config)")
        if any(not e >= 0 for e in epsilons):
            parser.error("--epsilon values must be >= 0")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    if args.weather is not None or args.prices is not None:
        if args.weather is None or args.prices is None:
            parser.error("--weather and --prices must be given together")
        source = "files"
    elif args.synth is not None:
        source = "synth"
    else:
        parser.error("give a scenario: --synth SEED or --weather W --prices P")
    return RunSpec(cfg, source, controllers, tuple(epsilons or ()), args.regime or cfg.regime,
                   args.out, args.jobs, args.weather, args.prices, args.synth, args.forecasts)


def load_run_scenario(spec: RunSpec):
    cfg = spec.config
    if spec.source == "synth":
        days = cfg.lookback_days + cfg.days + 2
        return synth_scenario(spec.synth_seed, days, cfg.profile, location=cfg.location)
    return load_scenario(spec.weather, spec.prices, location=cfg.location,
                         name=Path(spec.weather).stem)


def make_forecaster(spec: RunSpec):
    cfg = spec.config
    base = PersistenceForecaster(QuantileGrid(), cfg.lookback_days, cfg.location)
    if spec.forecasts is None:
        return base
    return ExternalQuantileForecaster.from_csv(spec.forecasts, fallback=base)


def _simulate_job(job):
    scenario, mode, cfg, forecaster = job
    return simulate(scenario, mode, cfg, forecaster)


def execute(spec: RunSpec, log=print) -> list:
    """Run every mode of ``spec`` and write the result files; returns summary rows."""
    scenario = load_run_scenario(spec)
    forecaster = make_forecaster(spec)
    modes = spec.modes()
    jobs = [(scenario, m, spec.config, None if m.kind == "pf" else forecaster) for m in modes]
    if spec.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(spec.jobs, len(jobs))) as ex:
            logs = list(ex.map(_simulate_job, jobs))
    else:
        logs = []
        for m, job in zip(modes, jobs):
            t0 = time.perf_counter()
            logs.append(_simulate_job(job))
            log(f"{m.label}: {len(logs[-1])} steps in {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    spec.out.mkdir(parents=True, exist_ok=True)
    rows = write_results(list(zip(modes, logs)), spec.out / "summary.csv", spec.out)
    meta = {
        "scenario": scenario.name,
        "source": spec.source,
        "synth_seed": spec.synth_seed,
        "weather": str(spec.weather) if spec.weather else None,
        "prices": str(spec.prices) if spec.prices else None,
        "forecasts": str(spec.forecasts) if spec.forecasts else None,
        "runs": [m.label for m in modes],
        "config": spec.config.to_flat(),
    }
    (spec.out / "run.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return rows


def format_summary(rows) -> str:
    head = ("controller", "regime", "epsilon", "revenue [EUR]", "delta [%]", "comfort", "degradation",
            "max viol [C]", "simult.")
    body = []
    for r in rows:
        body.append((
            r["controller"].upper(), r["regime"],
            "" if r["epsilon"] is None else f"{r['epsilon']:g}",
            f"{r['revenue_eur']:.2f}",
            "" if r["delta_pct"] is None else f"{r['delta_pct']:+.2f}",
            f"{r['comfort_cost']:.3f}", f"{r['degradation_cost']:.2f}",
            f"{r['max_comfort_violation_c']:.3g}", str(r["simultaneous_flow_steps"]),
        ))
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(head)]
    fmt = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    return "\n".join([fmt(head), fmt(["-" * w for w in widths])] + [fmt(b) for b in body])


def cmd_run(args, parser) -> int:
    spec = make_spec(args, parser)
    rows = execute(spec)
    print(format_summary(rows))
    print(f"\nwrote {spec.out / 'summary.csv'} and {len(rows)} time series")
    return EXIT_OK


def cmd_validate(args, parser) -> int:
    cfg = build_config(_read_overrides(args.config))
    if args.format == "json":
        print(cfg.to_json())
    else:
        print(format_table(cfg))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"run": cmd_run, "validate": cmd_validate}[args.command]
    try:
        return handler(args, parser)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
