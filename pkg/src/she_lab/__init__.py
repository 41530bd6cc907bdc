"""Lattice experiments for the stochastic heat equation with Hoelder noise coefficients."""

__version__ = "0.1.0"
