"""Simulation toolkit for temporal-mode processing in an off-resonant Raman memory."""

__version__ = "0.1.0"
