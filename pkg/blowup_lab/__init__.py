"""Numerical toolkit for multibubble blow-up of critical elliptic problems in 3D."""

__version__ = "0.1.0"
