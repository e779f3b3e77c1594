"""Deterministic federated learning simulator with trust-scored client filtering."""

__version__ = "0.1.0"
