"""Seeded simulation of poisoning attacks and robust aggregation in federated online learning to rank."""

__version__ = "0.1.0"
