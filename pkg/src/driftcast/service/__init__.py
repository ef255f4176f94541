"""HTTP service wrapping the forecasting engine."""

from .app import create_app

__all__ = ["create_app"]
