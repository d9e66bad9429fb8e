"""Simulation and verification engine for impulse-controlled diffusions."""
from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
