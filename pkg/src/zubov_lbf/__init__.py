"""Lyapunov-barrier functions from a modified Zubov equation.

Pipeline: label states with the trajectory oracle, fit a tanh network to the
Zubov PDE (physics-informed loss plus oracle data), then certify sublevel sets
of the network with interval branch and bound.
"""

__version__ = "0.1.0"

from .expr import parse
from .interval import Box, Interval
from .net import MLPParams, init_params
from .system import SystemSpec, linearize, solve_lyapunov
from .transform import BetaFamily

__all__ = ["Box", "BetaFamily", "Interval", "MLPParams", "SystemSpec", "init_params",
           "linearize", "parse", "solve_lyapunov", "__version__"]
