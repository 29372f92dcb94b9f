"""Simulation and verification toolkit for the semi-discrete Brownian
directed polymer: log-space dynamic programming for partition functions,
quenched path sampling, exact-identity verification, and scaling-exponent
experiments."""

__version__ = "0.1.0"
