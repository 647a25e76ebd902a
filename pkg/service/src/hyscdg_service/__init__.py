"""Reference HTTP service for the inpainting wire protocol."""

__version__ = "0.1.0"
