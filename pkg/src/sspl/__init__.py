"""Negative-free self-supervised sound-source localization at desk scale."""

__version__ = "0.1.0"
