"""Diversified prompt composition over frozen image/text encoders."""

__version__ = "0.1.0"
