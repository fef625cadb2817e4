"""Entropy and mutual-information estimation with variance-preserving diffusion models."""

__version__ = "0.1.0"
