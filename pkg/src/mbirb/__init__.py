"""Measurement-based interleaved randomised benchmarking on simulated
linear cluster states."""

__version__ = "0.1.0"
