"""Simulation and gate compilation for a random-access multimode cQED processor."""

__version__ = "0.1.0"
