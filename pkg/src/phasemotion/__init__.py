"""Compositional motion generation in a periodic phase latent space."""

__version__ = "0.1.0"
