"""Saliency prediction and analysis for augmented-reality viewports."""

__version__ = "0.1.0"
