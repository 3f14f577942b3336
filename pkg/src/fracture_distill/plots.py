"""Static figures: FROC and ROC curves of runs, and the sharpening function."""

from pathlib import Path
from typing import Dict, Mapping, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from fracture_distill.metrics import FP_TARGETS  # noqa: E402

Curve = Tuple[Sequence[float], Sequence[float]]


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_froc_curves(curves: Mapping[str, Curve], path: Path) -> Path:
    """Recall against false-positive pixel ratio, one labeled line per run."""
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    for label, (fp_ratios, recalls) in curves.items():
        ax.step(fp_ratios, recalls, where="post", label=label)
    ax.axvspan(FP_TARGETS[0], FP_TARGETS[-1], color="0.92", zorder=0)
    ax.set_xlim(0.0, 0.2)
    ax.set_ylim(0.0, 1.02)
    ax.set_xlabel("false positive pixel ratio")
    ax.set_ylabel("recall")
    ax.set_title("FROC")
    ax.legend(loc="lower right", fontsize="small")
    return _save(fig, path)


def plot_roc_curves(curves: Mapping[str, Curve], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    for label, (fpr, tpr) in curves.items():
        ax.plot(fpr, tpr, label=label)
    ax.plot([0, 1], [0, 1], color="0.6", linestyle=":", linewidth=1)
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.02)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title("ROC")
    ax.legend(loc="lower right", fontsize="small")
    return _save(fig, path)


def plot_sharpening_curves(
    curves: Dict[float, Tuple[np.ndarray, np.ndarray]], center_t: float, path: Path
) -> Path:
    """S(p) for several strengths; the identity line is strength 1."""
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    for strength, (p, s) in sorted(curves.items()):
        ax.plot(p, s, label=f"a = {strength:g}")
    ax.axvline(center_t, color="0.6", linestyle=":", linewidth=1)
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("teacher probability p")
    ax.set_ylabel("sharpened S(p)")
    ax.set_title(f"Sharpening, t = {center_t:g}")
    ax.legend(loc="lower right", fontsize="small")
    return _save(fig, path)
