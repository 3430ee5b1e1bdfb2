"""Simulation of a four-round noisy adaptive group testing algorithm."""

__version__ = "0.1.0"
