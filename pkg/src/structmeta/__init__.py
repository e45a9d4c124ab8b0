"""Structured meta-learning over per-task parameters with gradient-alignment task similarity."""

__version__ = "0.1.0"
