"""Fault-tolerance analysis of Toffoli-ancilla preparation for CSS codes."""

__version__ = "0.1.0"
