"""Weighted multi-aggregator GIN for frame-level emotion classification."""

__version__ = "0.1.0"
