"""Supersonic potential flow of the steady Euler-Poisson system in a rectangular duct."""

__version__ = "0.1.0"
