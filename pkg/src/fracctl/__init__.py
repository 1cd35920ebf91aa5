"""Mild solutions and approximate controllability of fractional neutral stochastic
integrodifferential inclusions with impulses and nonlocal conditions."""

__version__ = "0.1.0"
