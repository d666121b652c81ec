"""Quantum machine learning toolkit for UAV-swarm intrusion detection."""

__version__ = "0.1.0"
