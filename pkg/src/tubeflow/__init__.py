"""Brownian motion conditioned to stay in a shrinking tube around a closed curve."""

__version__ = "0.1.0"
