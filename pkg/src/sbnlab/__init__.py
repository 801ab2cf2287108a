"""Gradient-estimator laboratory for stochastic binary networks."""

__version__ = "0.1.0"
