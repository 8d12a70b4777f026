"""Numerical tools for orbit recovery in the high-noise regime."""

__version__ = "0.1.0"
