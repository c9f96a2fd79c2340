"""Simulation and analysis tools for caesium vapour Raman memories."""

__version__ = "0.1.0"

from .errors import ArgumentError, DomainError, NumericalError  # noqa: F401
