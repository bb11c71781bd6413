"""Numerical laboratory for surfaces in hyperbolic 3-space and their data at infinity."""

__version__ = "0.1.0"
