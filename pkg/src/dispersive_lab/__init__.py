"""Numerical laboratory for paradifferential calculus and dispersive estimates
of the linearized one-dimensional gravity-capillary flow."""

__version__ = "0.1.0"
