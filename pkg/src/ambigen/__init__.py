"""Ambiguous test-image generation and DNN-supervisor benchmarking."""

__version__ = "0.1.0"
