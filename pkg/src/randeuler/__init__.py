"""Finite-volume solver for the 2-D compressible Euler equations with random initial data."""

__version__ = "0.1.0"
