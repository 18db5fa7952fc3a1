"""Numerical laboratory for two-dimensional gradient interface models."""

__version__ = "0.1.0"
