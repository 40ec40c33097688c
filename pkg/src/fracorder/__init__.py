"""Fractional-order resolvent numerics and order recovery."""

__version__ = "0.1.0"
