"""Numerical laboratory for disordered pinning models with marginal disorder."""
__version__ = "0.1.0"
