"""Deterministic federated-learning simulator for DDoS flow classifiers."""

__version__ = "0.1.0"
