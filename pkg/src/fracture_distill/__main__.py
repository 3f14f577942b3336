"""
Entry point for running fracture_distill as a module.

Usage:
    python -m fracture_distill train --seed 0
    python -m fracture_distill report runs/seed-0
"""

from fracture_distill.cli.main import app

if __name__ == "__main__":
    app()
