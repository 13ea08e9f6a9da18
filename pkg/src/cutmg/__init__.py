"""Unfitted finite element contact solver with a generalized multigrid method."""

__version__ = "0.1.0"
