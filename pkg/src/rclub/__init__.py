"""Robust clustering of linear bandits with online corrupted-user detection."""

__version__ = "0.1.0"
