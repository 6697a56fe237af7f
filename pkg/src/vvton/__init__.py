"""Desk-scale two-stage video virtual try-on pipeline."""

__version__ = "0.1.0"
