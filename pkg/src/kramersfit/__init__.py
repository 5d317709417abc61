"""Zeeman and crystal-field analysis of rare-earth ions at low-symmetry lattice sites."""

__version__ = "0.1.0"
