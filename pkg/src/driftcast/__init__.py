"""Continual-learning energy load forecasting engine."""

__version__ = "0.1.0"
