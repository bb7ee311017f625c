"""Predictive-coding training engine with pluggable neuron initializations."""

__version__ = "0.1.0"
