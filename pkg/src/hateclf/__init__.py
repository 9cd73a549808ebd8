"""Hate-speech classification heads on a pretrained transformer encoder."""

__version__ = "0.1.0"
