"""Service layer: FastAPI app plus the request/response schemas."""

from .app import app

__all__ = ["app"]
