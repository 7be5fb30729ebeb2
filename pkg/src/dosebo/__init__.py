"""Constrained Bayesian optimization for personalized dose-finding."""

__version__ = "0.1.0"
