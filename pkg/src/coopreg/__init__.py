"""Cooperative output regulation of networked parabolic agents."""
__version__ = "0.1.0"
