"""Numerical laboratory for stable jump processes on the Sierpinski gasket."""

__version__ = "0.1.0"
