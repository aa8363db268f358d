"""Polyphonic sound event detection with a co-occurrence graph Laplacian penalty."""

__version__ = "0.1.0"
