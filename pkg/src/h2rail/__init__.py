"""Convex speed and energy-management optimisation for fuel-cell hybrid trains."""

__version__ = "0.1.0"
