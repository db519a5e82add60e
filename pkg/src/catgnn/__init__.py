"""Causal temporal graph attention for fraud detection on multi-relation graphs."""
__version__ = "0.1.0"
