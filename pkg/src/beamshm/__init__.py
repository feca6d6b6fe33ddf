"""Cantilever-beam damage identification from simulated frequency responses."""

__version__ = "0.1.0"
