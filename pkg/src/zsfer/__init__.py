"""Contrastive video-text training and zero-shot expression classification at desk scale."""

__version__ = "0.1.0"
