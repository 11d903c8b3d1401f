"""Causal long-tailed classification: de-confounded training and TDE inference."""

__version__ = "0.1.0"
