"""Efficient additive attention, its baselines, and SwiftFormer model accounting."""

__version__ = "0.1.0"
