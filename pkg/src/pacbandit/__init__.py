"""Smoothed exponential-weights bandits with PAC-Bayes-Bernstein bound verification."""

__version__ = "0.1.0"
