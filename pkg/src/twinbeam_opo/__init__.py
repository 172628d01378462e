"""Simulation and analysis toolkit for a doubly resonant, frequency-degenerate type-II OPO."""

__version__ = "0.1.0"
