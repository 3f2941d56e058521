"""Detection of dark objects occulting stars in a fixed-pointing star field."""

__version__ = "0.1.0"
