"""Stochastic-geometry model and Monte Carlo validator for uplink massive MIMO
with fractional pilot reuse."""

__version__ = "0.1.0"

from .geometry import CC, CE  # noqa: E402,F401
