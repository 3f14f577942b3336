"""CLI module for fracture-distill."""

from fracture_distill.cli.main import app

__all__ = ["app"]
