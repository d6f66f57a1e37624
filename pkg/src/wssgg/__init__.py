"""Weakly-supervised scene graph generation from linguistic structures."""

__version__ = "0.1.0"
