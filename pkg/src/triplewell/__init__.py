"""Numerical toolkit for the triple-well vector Allen-Cahn system in the plane."""

__version__ = "0.1.0"
