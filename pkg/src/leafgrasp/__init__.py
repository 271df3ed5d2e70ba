"""Hybrid geometric / neural grasp-point selection for leaves on depth + mask scenes."""

__version__ = "0.1.0"
