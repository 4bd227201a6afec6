"""Numerical laboratory for the Dirac-sea pilot-wave model on a periodic box."""

__version__ = "0.1.0"
