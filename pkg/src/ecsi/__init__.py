"""Energy-consistent stochastic interpolant surrogates for 2D turbulence."""

from . import cli, dataio, drift, fields, interpolant, metrics, nsolve, sample, train

__all__ = [
    "cli",
    "dataio",
    "drift",
    "fields",
    "interpolant",
    "metrics",
    "nsolve",
    "sample",
    "train",
]

__version__ = "0.1.0"
