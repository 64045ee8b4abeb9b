"""Rare-event estimation for Gilbert graphs: naive, conditional and grid importance sampling."""

from .core import PoissonTable, RngStream, Window, intensity_to_beta, make_poisson_table, unit_ball_volume
from .estimators import EstimateReport, Estimator, TrialConfig, estimate
from .graph import EventKind, EventSpec, GraphState
from .grid import GridBlocker

__all__ = ["EstimateReport", "Estimator", "EventKind", "EventSpec", "GraphState", "GridBlocker",
           "PoissonTable", "RngStream", "TrialConfig", "Window", "estimate", "intensity_to_beta",
           "make_poisson_table", "unit_ball_volume"]
__version__ = "0.1.0"
