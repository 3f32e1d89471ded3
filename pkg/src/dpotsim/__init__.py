"""Federated-learning backdoor simulator with optimized triggers and robust aggregation."""

__version__ = "0.1.0"
