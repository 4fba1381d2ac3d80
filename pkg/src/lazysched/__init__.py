"""Finite-horizon lazy scheduling and water-filling schedulers."""

__version__ = "0.1.0"
