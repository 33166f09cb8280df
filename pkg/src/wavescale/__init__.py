"""Explain and stress-test image classifiers in the wavelet (space-scale) domain."""

__version__ = "0.1.0"
