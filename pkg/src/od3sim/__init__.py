"""Simulator and certifier for online price-coordinated power allocation.

The package pairs three pieces:

* an online price-update loop in which users respond to a broadcast price
  with their locally optimal demand (:mod:`od3sim.od3`),
* an exact per-step oracle for the capacity-constrained welfare optimum
  (:mod:`od3sim.oracle`), and
* a certifier that evaluates tracking/volatility/welfare bound envelopes
  along simulated trajectories (:mod:`od3sim.bounds`).

Problem data (utilities, capacity/target traces) lives in :mod:`od3sim.model`
and :mod:`od3sim.traces`; the experiment runner is :mod:`od3sim.cli`.
"""

from od3sim.model import (
    Dimensions,
    GlobalParams,
    QuadraticUtility,
    SeparableUtility,
    UtilityInterface,
    derive_global_params,
    local_demand,
)
from od3sim.traces import SystemTrace, ingest_capacity_csv, synth_trace, validate_trace
from od3sim.od3 import OnlineState, SignConvention, initial_state, od3_step, run_od3
from od3sim.oracle import OracleSolution, solve_step, solve_trace
from od3sim.bounds import BoundReport, BoundRow, run_certificates

__version__ = "0.1.0"

__all__ = [
    "Dimensions",
    "GlobalParams",
    "QuadraticUtility",
    "SeparableUtility",
    "UtilityInterface",
    "derive_global_params",
    "local_demand",
    "SystemTrace",
    "synth_trace",
    "ingest_capacity_csv",
    "validate_trace",
    "OnlineState",
    "SignConvention",
    "initial_state",
    "od3_step",
    "run_od3",
    "OracleSolution",
    "solve_step",
    "solve_trace",
    "BoundReport",
    "BoundRow",
    "run_certificates",
    "__version__",
]
