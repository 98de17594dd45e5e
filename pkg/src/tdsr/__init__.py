"""Task-driven super-resolution of document scans."""

__version__ = "0.1.0"
