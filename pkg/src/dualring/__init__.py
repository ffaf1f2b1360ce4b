"""Dual-ring profile privacy toolkit."""

__version__ = "0.1.0"
