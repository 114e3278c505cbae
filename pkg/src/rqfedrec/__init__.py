"""Federated recommendation with residual-quantized, feature-indexed codebooks."""

__version__ = "0.1.0"
