"""Partial Hamiltonian formalism for degenerate Lagrangians."""

__version__ = "0.1.0"
