"""Artifact writers sharing one Jinja2-backed base."""

from fracture_distill.writers.base import BaseWriter

__all__ = ["BaseWriter"]
