"""Augmentation-guided multiple clustering with a small numpy CNN."""

__version__ = "0.1.0"
