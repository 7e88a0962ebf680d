"""Flatness-based null-control synthesis for 1D parabolic equations."""

__version__ = "0.1.0"
