"""Fit rendering parameters to a few real images and mass-produce synthetic training data."""

__version__ = "0.1.0"
