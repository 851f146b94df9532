"""Discrete optimal transport paths and entropy concavity on the integer lattice."""

__version__ = "0.1.0"
