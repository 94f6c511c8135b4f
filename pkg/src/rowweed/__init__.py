"""Weed detection in row-crop aerial images with training data labeled
automatically from crop-row geometry."""

from .errors import RowWeedError

__version__ = "0.1.0"

__all__ = ["RowWeedError", "__version__"]
