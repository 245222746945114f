"""Numerical laboratory for the normalised Kähler-Ricci flow on flat tori."""

__version__ = "0.1.0"
