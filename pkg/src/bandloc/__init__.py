"""Numerical laboratory for localization in Gaussian random band matrices."""

__version__ = "0.1.0"
