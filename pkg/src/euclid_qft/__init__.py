"""Lattice workbench for Euclidean free fields and P(φ)₂ interactions."""

__version__ = "0.1.0"
