"""Compressed predictive state representations: learning and planning."""

__version__ = "0.1.0"
