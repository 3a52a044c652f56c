"""FastAPI service wrapping the watermarking core."""

from .app import app

__all__ = ["app"]
