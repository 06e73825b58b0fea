"""Solvers for the minimal cost of an excursion with unit area."""

from .common import HorizonBound, InfeasibleGrid, NonReturn, VariationalSolution, horizon_bound
from .direct import DirectSettings, solve_direct

__all__ = [
    "HorizonBound",
    "InfeasibleGrid",
    "NonReturn",
    "VariationalSolution",
    "horizon_bound",
    "DirectSettings",
    "solve_direct",
]

from .shooting import ShotResult, shoot, solve_shooting  # noqa: E402

__all__ += ["ShotResult", "shoot", "solve_shooting"]

from .analysis import BpiResult, PropertyReport, dump_solution, property_checks, solve_Bpi  # noqa: E402

__all__ += ["BpiResult", "PropertyReport", "dump_solution", "property_checks", "solve_Bpi"]
