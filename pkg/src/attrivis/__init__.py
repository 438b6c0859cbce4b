"""Attribute rating prediction from face images, with feature visualization."""

__version__ = "0.1.0"
