"""Lattice laboratory for reflected BSDEs with monotone generators."""

__version__ = "0.1.0"
