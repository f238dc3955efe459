"""Gelfand-type problems on domains of double revolution: discretization, continuation
to the fold, stability, regularity diagnostics and weighted inequalities."""

from . import analysis, discretization, geometry, inequalities, nonlinearity, solver, stability
from .errors import GelfandError

__all__ = ["analysis", "discretization", "geometry", "inequalities", "nonlinearity", "solver",
           "stability", "GelfandError"]
__version__ = "0.1.0"
