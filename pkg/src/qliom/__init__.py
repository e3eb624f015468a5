"""Quasi-local integrals of motion for strongly disordered spin chains."""

__version__ = "0.1.0"
