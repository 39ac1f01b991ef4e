"""Convolutional autoencoder probes for quasi-periodic signals."""

__version__ = "0.1.0"
