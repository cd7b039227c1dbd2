"""Distributed proximal point method with cumulative correction for sums of monotone operators."""

__version__ = "0.1.0"
