"""Heterogeneous treatment effects from fused observational and randomized data."""

__version__ = "0.1.0"
