"""Multiclass Markovian queueing networks with class-independent routing."""

__version__ = "0.1.0"
