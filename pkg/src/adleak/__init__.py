"""Simulation and analysis of information leakage in advertising measurement."""

__version__ = "0.1.0"
