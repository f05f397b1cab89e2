"""Triangular EM training for low-resource translation at desk scale."""

__version__ = "0.1.0"
