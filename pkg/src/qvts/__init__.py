"""Phon states, audio measurement apparati and Hamiltonian stream tracking."""

__version__ = "0.1.0"
