"""Capacity of random walk ranges on Z^4: exact potential theory, Monte Carlo, and Brownian limits."""

__version__ = "0.1.0"
