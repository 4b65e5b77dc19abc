"""Stochastic block transition models for dynamic networks."""

__version__ = "0.1.0"
