"""Passive tracers in the curl of the 2D Gaussian free field."""

__version__ = "0.1.0"
