"""Tactile height-map reconstruction and surface metrology."""

__version__ = "0.1.0"
