"""Simulation and receding-horizon control of a small virtual power plant.

Modules
-------
plant     building thermal model, battery, PV, wind and grid exchange
forecast  quantile forecasts and their empirical distributions
dro       Wasserstein worst-case expectation of affine price costs
qp        ADMM solver for convex quadratic programs
mpc       PF / FC / DR controllers and the closed loop
data      scenario CSVs, synthetic scenarios, configuration, results
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, build_config, load_config  # noqa: E402
from .data import Scenario, load_scenario, synth_scenario, write_results  # noqa: E402
from .mpc import ControllerMode, TrajectoryLog, realized_revenue, simulate  # noqa: E402

__all__ = [
    "ControllerMode",
    "ExperimentConfig",
    "Scenario",
    "TrajectoryLog",
    "build_config",
    "load_config",
    "load_scenario",
    "realized_revenue",
    "simulate",
    "synth_scenario",
    "write_results",
]
