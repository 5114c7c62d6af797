"""Coupling-based mixing estimates for randomly forced 2-D flows."""

__version__ = "0.1.0"
