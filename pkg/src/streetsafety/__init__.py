"""Streetscape indicators, interpretable accident-type models and causal effect estimation."""

__version__ = "0.1.0"
