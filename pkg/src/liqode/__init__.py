"""Solutions of x^2 u'' = a x u' + b u - c (u' - 1)^2, u(0) = 0, and the
optimal-liquidation problem they describe."""

from .core import ModelParams, Regime, StatePoint, classify, residual
from .solver import GridSolution, ShootingResult, continue_to_zero, integrate, solve_global, solve_local

__all__ = [
    "GridSolution",
    "ModelParams",
    "Regime",
    "ShootingResult",
    "StatePoint",
    "classify",
    "continue_to_zero",
    "integrate",
    "residual",
    "solve_global",
    "solve_local",
]

__version__ = "0.1.0"
