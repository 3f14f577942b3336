"""
fracture-distill: semi-supervised heatmap fracture detection.

A detector is pretrained on a few region-labeled images and many
negatives, then distilled as a mean teacher on image-level positives
whose pseudo-GT maps are sharpened with an adaptive, asymmetric
operator before the student learns from them.

Usage:
    fracture_distill generate --seed 0 --out data/
    fracture_distill train --config configs/desk.yaml --seed 0

License: MIT
"""

__version__ = "0.4.0"
__license__ = "MIT"

from fracture_distill.sharpening import SharpeningConfig, aals, sharpen_scalar  # noqa: E402

__all__ = [
    "__version__",
    "SharpeningConfig",
    "aals",
    "sharpen_scalar",
]
