"""Heterogeneous-graph prompt learning pipeline for imbalanced user detection."""

__version__ = "0.1.0"
