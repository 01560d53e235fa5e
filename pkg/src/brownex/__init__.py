"""Brownian-component tests for trader paths and optimal-execution Monte Carlo."""

__version__ = "1.0.0"
