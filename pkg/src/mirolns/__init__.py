"""Feasibility search for maritime inventory routing instances."""

__version__ = "0.1.0"
