"""HTTP service wrapping the experiment laboratory."""

from cachelab.service.app import app

__all__ = ["app"]
