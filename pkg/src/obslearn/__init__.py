"""Observational learning in gridworlds: environment, teacher, A3C, exact oracle, curriculum."""

__version__ = "0.1.0"
