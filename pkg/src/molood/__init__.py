"""Strict scaffold-cluster OOD benchmarking and policy-selected multi-source adaptation."""

__version__ = "0.1.0"
