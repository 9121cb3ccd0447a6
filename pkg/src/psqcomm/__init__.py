"""Projective-simulation agents for quantum communication protocols."""

__version__ = "0.1.0"
