"""Data-driven nonlinear reduced-order modelling of a cubic-stiffness chain."""

__version__ = "0.1.0"
