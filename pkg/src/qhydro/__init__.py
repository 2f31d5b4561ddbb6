"""Quantum hydrodynamics toolkit: Madelung fields, equation residuals, label-swap tests."""

__version__ = "0.1.0"
