"""Optimal transport, Hopf-Lax flow and curvature-dimension checks on finite metric measure spaces."""

__version__ = "0.1.0"
