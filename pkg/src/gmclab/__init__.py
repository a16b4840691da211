"""Simulation and verification tools for boundary Gaussian multiplicative chaos
on the upper half-plane."""

__version__ = "0.1.0"
