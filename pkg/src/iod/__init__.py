"""Spatio-temporal aggregation detection for insubstantial objects in video."""

__version__ = "0.1.0"
