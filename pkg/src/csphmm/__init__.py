"""Circular suprasegmental HMMs for speaker identification."""

__version__ = "0.1.0"
