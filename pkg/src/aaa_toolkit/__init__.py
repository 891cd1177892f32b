"""Anatomy-aware aortic aneurysm segmentation, surface reconstruction and morphometry."""

__version__ = "0.1.0"
