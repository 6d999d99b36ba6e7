"""Learned repair of vessel masks inside motion-stripe rows."""

__version__ = "0.1.0"
