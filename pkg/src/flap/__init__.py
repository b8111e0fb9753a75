"""Masked contrastive audio-text representation learning with spectrogram reconstruction."""

__version__ = "0.1.0"
