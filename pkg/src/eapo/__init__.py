"""Entropy advantage policy optimisation with an exact tabular oracle."""
__version__ = "0.1.0"
