"""Gene-signature discovery from attribution maps of a dense classifier."""

__version__ = "0.1.0"
