"""Observability analysis for systems with delayed and encoded measurements."""

__version__ = "0.1.0"
