"""Fidelity of noisy graph states through a classical spin-model mapping."""

__version__ = "0.1.0"
