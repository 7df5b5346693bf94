"""Medoid-based active learning over self-supervised speech features."""

__version__ = "0.1.0"
