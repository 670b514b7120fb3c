# ecborrow — adaptive influence-based borrowing of external controls
"""Augment randomized-trial treatment-effect estimation with external controls."""

__version__ = "0.1.0"
