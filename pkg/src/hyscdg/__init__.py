"""Bi-temporal semantic change dataset synthesis toolkit."""

__version__ = "0.1.0"
