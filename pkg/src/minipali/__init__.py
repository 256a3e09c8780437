"""Desk-scale image-and-text to text model: ViT visual tokens fed to a text encoder-decoder."""

__version__ = "0.1.0"
