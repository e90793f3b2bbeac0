"""Synchronization of incoherently pumped, dipole-coupled two-level emitters."""

__version__ = "0.1.0"
