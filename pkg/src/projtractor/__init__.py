"""Numerical projective tractor calculus and the metrizability equation."""

__version__ = "0.1.0"
