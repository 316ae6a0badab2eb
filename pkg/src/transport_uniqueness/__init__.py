"""Uniqueness of L1 weak solutions of the mass transport equation d/dt rho = -div(b rho)."""

__version__ = "0.1.0"
