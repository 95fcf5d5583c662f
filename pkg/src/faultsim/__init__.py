"""Deterministic desk-scale simulator of fault-tolerant DP x PP training."""

__version__ = "0.1.0"
