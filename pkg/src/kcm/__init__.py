"""Oriented kinetically constrained spin models."""
__version__ = "0.1.0"
