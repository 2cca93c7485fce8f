"""Prediction and captioning of near-future activity sequences."""

__version__ = "0.1.0"
