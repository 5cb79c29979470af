"""Blind localization of point sources through operators from a known subspace."""

__version__ = "0.1.0"
