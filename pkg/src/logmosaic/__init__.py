"""Logarithmic-search image registration and mosaicking."""

__version__ = "0.1.0"
