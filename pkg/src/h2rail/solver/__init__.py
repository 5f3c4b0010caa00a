"""Sparse conic interior-point solver."""

from .cones import ConeDims, Cones, NTScaling
from .ipm import (
    INFEASIBLE,
    ITERATION_LIMIT,
    OPTIMAL,
    UNBOUNDED,
    Residuals,
    SolverError,
    SolverResult,
    SolverSettings,
    kkt_residuals,
    solve,
)

__all__ = [
    "ConeDims", "Cones", "NTScaling", "Residuals", "SolverError", "SolverResult", "SolverSettings",
    "kkt_residuals", "solve", "OPTIMAL", "INFEASIBLE", "UNBOUNDED", "ITERATION_LIMIT",
]
