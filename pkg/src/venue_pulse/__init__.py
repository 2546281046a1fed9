"""Temporal demand signatures and trends of new urban venues from check-in data."""

__version__ = "0.1.0"
