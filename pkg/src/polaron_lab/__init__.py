"""Numerical laboratory for the polaron path measure and its interval process."""

__version__ = "0.1.0"
