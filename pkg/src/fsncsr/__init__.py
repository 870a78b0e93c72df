"""Frequency-separated, noise-conditioned normalizing-flow super-resolution."""

__version__ = "0.1.0"
