"""Discrete obstacle problems with measure data on masked uniform grids."""

__version__ = "0.1.0"
