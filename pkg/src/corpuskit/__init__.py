"""Pretraining corpus curation and training capacity planning."""

__version__ = "0.1.0"
