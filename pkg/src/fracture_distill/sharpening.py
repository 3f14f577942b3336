"""
Adaptive asymmetric label sharpening.

The sharpening operator maps a teacher probability p to

    S(p) = expit(a * logit(p) + (1 - a) * logit(t))

where t is the sharpening center (a fixed point for every strength) and
a >= 1 is the strength. The strength adapts to the peak of the pseudo-GT
map, a = a0 - (a0 - 1) * max(map), so a confident map is left untouched
and a weak map is sharpened hard. The final label is max(S(map), map):
sharpening may amplify activations but never suppresses them.

All transcendental math runs in float64 regardless of the map dtype.
"""

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import numpy.typing as npt
from scipy.special import expit
from scipy.special import logit as _logit

from fracture_distill.errors import ConfigError, DomainError, ShapeError

DEFAULT_EPSILON = 1e-6
_ABOVE_ZERO = float(np.nextafter(0.0, 1.0))
_BELOW_ONE = float(np.nextafter(1.0, 0.0))

ProbabilityMap = npt.NDArray[np.floating]


@dataclass(frozen=True)
class SharpeningConfig:
    """Center and maximum strength of the sharpening operator."""

    center_t: float = 0.4
    max_strength_a0: float = 4.0
    clamp_epsilon: float = DEFAULT_EPSILON
    # Constant strength a = a0 when False.
    adaptive: bool = True
    # Return S(map) without max(S(map), map) when False.
    max_guard: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.center_t < 1.0:
            raise ConfigError(f"center_t must lie in (0, 1), got {self.center_t}")
        if not self.max_strength_a0 >= 1.0:
            raise ConfigError(
                f"max_strength_a0 must be >= 1, got {self.max_strength_a0}"
            )
        if not 0.0 < self.clamp_epsilon <= 0.01:
            raise ConfigError(
                f"clamp_epsilon must lie in (0, 0.01], got {self.clamp_epsilon}"
            )


def check_probability_map(values: np.ndarray) -> None:
    """Raise if `values` is not a non-empty 2-D grid of values in [0, 1]."""
    if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
        raise ShapeError(f"probability map must be a non-empty 2-D grid, got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise DomainError("probability map contains non-finite values")
    if values.min() < 0.0 or values.max() > 1.0:
        raise DomainError(
            f"probability map values must lie in [0, 1], got [{values.min()}, {values.max()}]"
        )


def logit(p: float) -> float:
    """ln(p / (1 - p)) for p strictly inside (0, 1)."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"logit is undefined for p={p}; clamp to (0, 1) first")
    return math.log(p / (1.0 - p))


def clamp(p: float | np.ndarray, epsilon: float = DEFAULT_EPSILON):
    """Clamp probabilities into [epsilon, 1 - epsilon]."""
    return np.clip(p, epsilon, 1.0 - epsilon)


def _open_unit(s):
    # expit saturates to exactly 0 or 1 for large |z|; stay strictly inside (0, 1)
    # without merging any values that were distinct.
    return np.clip(s, _ABOVE_ZERO, _BELOW_ONE)


def adaptive_strength(y_max: float, config: SharpeningConfig) -> float:
    """
    Strength for a pseudo-GT whose peak probability is `y_max`.

    Linear from a0 at y_max=0 down to 1 at y_max=1. With
    `config.adaptive` off, the constant a0 is returned.
    """
    a0 = config.max_strength_a0
    if not config.adaptive:
        return a0
    a = a0 - (a0 - 1.0) * float(y_max)
    return min(max(a, 1.0), a0)


def sharpen_scalar(p: float, strength_a: float, config: SharpeningConfig) -> float:
    """Sharpen one probability with an explicit strength."""
    if strength_a < 1.0:
        raise ConfigError(f"sharpening strength must be >= 1, got {strength_a}")
    q = float(clamp(p, config.clamp_epsilon))
    z = strength_a * logit(q) + (1.0 - strength_a) * logit(config.center_t)
    return float(_open_unit(expit(z)))


def sharpen_array(
    values: np.ndarray, strength_a: float, config: SharpeningConfig
) -> np.ndarray:
    """Vectorized S(p) in float64; no max guard."""
    q = clamp(np.asarray(values, dtype=np.float64), config.clamp_epsilon)
    z = strength_a * _logit(q) + (1.0 - strength_a) * logit(config.center_t)
    return _open_unit(expit(z))


def aals(pseudo_gt: ProbabilityMap, config: SharpeningConfig) -> np.ndarray:
    """
    Sharpen a pseudo-GT map with one map-level adaptive strength.

    The peak used for the strength is taken on the raw map, before
    clamping. Returns a float64 map; with the max guard on, the output
    is elementwise >= the input and keeps its argmax pixel set.
    """
    raw = np.asarray(pseudo_gt, dtype=np.float64)
    check_probability_map(raw)
    a = adaptive_strength(float(raw.max()), config)
    if a == 1.0:
        return raw.copy()
    sharpened = sharpen_array(raw, a, config)
    if config.max_guard:
        return np.maximum(sharpened, raw)
    return sharpened


def aals_batch(pseudo_gts: np.ndarray, config: SharpeningConfig) -> np.ndarray:
    """Apply `aals` independently to each map of a (B, H, W) stack."""
    stack = np.asarray(pseudo_gts)
    if stack.ndim != 3:
        raise ShapeError(f"expected a (B, H, W) stack, got shape {stack.shape}")
    if stack.shape[0] == 0:
        return stack.astype(np.float64)
    return np.stack([aals(m, config) for m in stack])


def sharpening_curve(
    config: SharpeningConfig,
    strengths: Sequence[float] = (1.0, 2.0, 4.0, 8.0, 16.0),
    num_points: int = 201,
) -> dict[float, tuple[np.ndarray, np.ndarray]]:
    """S(p) samples on an even grid of p for each strength, for plotting."""
    p = np.linspace(0.0, 1.0, num_points)
    curves = {}
    for a in strengths:
        curves[float(a)] = (p, sharpen_array(p, float(a), config))
    return curves
