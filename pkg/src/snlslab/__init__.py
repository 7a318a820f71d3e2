"""Numerical laboratory for a stochastic quadratic Schrödinger system."""
