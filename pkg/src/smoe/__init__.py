"""Desk-scale speech-to-text transformer with supervised expert routing."""

__version__ = "0.1.0"
