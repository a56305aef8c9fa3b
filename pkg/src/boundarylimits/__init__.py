"""Boundary-constrained estimation, limit random fields, and their Monte Carlo checks."""

__version__ = "0.1.0"
