"""Spatial extremes with max-stable processes in a transformed climate space."""

__version__ = "0.1.0"
