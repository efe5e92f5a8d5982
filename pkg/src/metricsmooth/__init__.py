"""Numerical smoothing of low-regularity Riemannian metrics on charts."""

__version__ = "0.1.0"
