"""Implicit shock tracking with an extended discontinuous Galerkin discretisation."""

__version__ = "0.1.0"
