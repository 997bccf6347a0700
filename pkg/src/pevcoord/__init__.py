"""Coordinated PEV charging on a power grid by online two-stage optimization.

Each slot solves a horizon problem with binary charging decisions by a
penalized path-following method over a semidefinite power-flow relaxation,
then recovers a rank-one voltage profile for the slot that is applied.
"""

from .builder import PenaltyConfig
from .errors import InfeasibleError, NonConvergenceError
from .fleet import FleetState, PevRecord, generate_fleet, load_fleet
from .grid import GridCase, ScenarioProfiles, bundled_case_path, load_case
from .micp import solve_micp
from .mpc import MpcConfig, MpcTrace, brute_force_oracle, run_mpc
from .rank1 import extract_voltage, solve_rank1

__version__ = "0.1.0"

__all__ = ["FleetState", "GridCase", "InfeasibleError", "MpcConfig", "MpcTrace",
           "NonConvergenceError", "PenaltyConfig", "PevRecord", "ScenarioProfiles",
           "brute_force_oracle", "bundled_case_path", "extract_voltage", "generate_fleet", "load_case",
           "load_fleet", "run_mpc", "solve_micp", "solve_rank1"]
