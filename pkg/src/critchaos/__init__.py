"""Mollified log-correlated fields, critical chaos and the Bessel(3) spine at desk scale."""

__version__ = "0.1.0"
