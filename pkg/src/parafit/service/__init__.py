"""HTTP service wrapping the fitting core (FastAPI)."""

from .app import create_app

__all__ = ["create_app"]
