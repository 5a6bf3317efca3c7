"""Causal autonomy stack for a simulated mine-survey drone."""

__version__ = "0.1.0"
