"""Simulation and verification toolkit for scalar SDEs driven by fractional Brownian motion."""

from .fbm import FbmPath, Grid, covariance, sample_cholesky, sample_davies_harte, sample_path, sample_paths
from .flow import Coefficients, FlowMap, ReferenceSolution, solve_reference

__version__ = "0.1.0"

__all__ = [
    "Coefficients",
    "FbmPath",
    "FlowMap",
    "Grid",
    "ReferenceSolution",
    "covariance",
    "sample_cholesky",
    "sample_davies_harte",
    "sample_path",
    "sample_paths",
    "solve_reference",
]
