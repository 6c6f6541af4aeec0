"""Comparative causal mediation estimation for three-arm randomized experiments."""

__version__ = "0.1.0"
