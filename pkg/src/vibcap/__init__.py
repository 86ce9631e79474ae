"""Vibrotactile captioning: signals to text, end to end."""

__version__ = "0.1.0"
