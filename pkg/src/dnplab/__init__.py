"""Numerical laboratory for doubly nonlinear parabolic and weighted p-Laplace inverse problems."""

__version__ = "0.1.0"
