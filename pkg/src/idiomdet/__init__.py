"""Idiomatic multi-word expression detection: marking, encoder training, post-processing."""

__version__ = "0.1.0"
