"""Sparsity-aware multi-view 4D facial expression recognition toolkit."""

__version__ = "0.1.0"
