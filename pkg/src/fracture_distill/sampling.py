"""
Stratified batch composition over the R, P and N training pools.

Each batch draws a fixed share of its slots from every pool. Shares are
either given explicitly or proportional to the pool sizes; the R share
is then raised so that every batch holds at least `min_region` region-
labeled samples, and the other shares shrink to make room.

Per batch, a pool gets floor(share * B) slots plus, for the leftover
slots, one systematic draw over the fractional parts. Expected counts
over an epoch therefore equal share * B exactly.

Within a pool, samples are visited in a fresh random order and the order
is reshuffled whenever the pool runs out.
"""

import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from fracture_distill.data.synthetic import LabelKind
from fracture_distill.errors import ConfigError

POOL_ORDER: Tuple[LabelKind, ...] = (LabelKind.REGION, LabelKind.POSITIVE, LabelKind.NEGATIVE)

# (pool, index into that pool)
BatchSlot = Tuple[LabelKind, int]


def _letter_map(batch_mix: Mapping[str, float]) -> Dict[LabelKind, float]:
    by_letter = {kind.letter: kind for kind in LabelKind}
    mix: Dict[LabelKind, float] = {}
    for key, value in batch_mix.items():
        kind = by_letter.get(str(key).upper())
        if kind is None:
            raise ConfigError(f"batch_mix keys must be R, P or N, got '{key}'")
        if value < 0:
            raise ConfigError(f"batch_mix fraction for {key} must be >= 0")
        mix[kind] = float(value)
    return mix


def batch_fractions(
    pool_sizes: Mapping[LabelKind, int],
    batch_size: int,
    min_region: int = 2,
    batch_mix: Optional[Mapping[str, float]] = None,
) -> Dict[LabelKind, float]:
    """
    Effective per-pool shares of a batch; they sum to 1.

    Empty pools get share 0. Raises ConfigError when R is empty or the
    minimum R count does not fit into a batch.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if pool_sizes.get(LabelKind.REGION, 0) == 0:
        raise ConfigError("the region-labeled pool R is empty")
    if min_region > batch_size:
        raise ConfigError(
            f"min_region_per_batch={min_region} exceeds batch_size={batch_size}"
        )

    active = [kind for kind in POOL_ORDER if pool_sizes.get(kind, 0) > 0]
    if batch_mix is None:
        raw = {kind: float(pool_sizes[kind]) for kind in active}
    else:
        given = _letter_map(batch_mix)
        raw = {kind: given.get(kind, 0.0) for kind in active}
    total = sum(raw.values())
    if total <= 0:
        raise ConfigError("batch_mix gives no weight to any non-empty pool")
    shares = {kind: raw.get(kind, 0.0) / total for kind in POOL_ORDER}

    floor_share = min_region / batch_size
    if shares[LabelKind.REGION] < floor_share:
        rest = 1.0 - shares[LabelKind.REGION]
        scale = (1.0 - floor_share) / rest if rest > 0 else 0.0
        shares = {kind: share * scale for kind, share in shares.items()}
        shares[LabelKind.REGION] = floor_share
    return shares


def draw_counts(
    shares: Mapping[LabelKind, float], batch_size: int, rng: np.random.Generator
) -> Dict[LabelKind, int]:
    """Slot counts of one batch by systematic rounding of share * B."""
    expected = np.array([shares.get(kind, 0.0) * batch_size for kind in POOL_ORDER])
    counts = np.floor(expected + 1e-12).astype(int)
    leftover = batch_size - int(counts.sum())
    if leftover > 0:
        remainders = np.clip(expected - counts, 0.0, None)
        # Only pools with a fractional remainder may take a leftover slot.
        eligible = np.flatnonzero(remainders > 0)
        if eligible.size == 0:
            eligible = np.flatnonzero(expected > 0)
            remainders = np.ones_like(expected)
        cumulative = np.cumsum(remainders[eligible])
        cumulative *= leftover / cumulative[-1]
        points = rng.random() + np.arange(leftover)
        picks = np.searchsorted(cumulative, points, side="right")
        picks = np.minimum(picks, eligible.size - 1)
        for pick in picks:
            counts[eligible[pick]] += 1
    return {kind: int(c) for kind, c in zip(POOL_ORDER, counts)}


class _PoolCursor:
    """Walks a pool in shuffled order, reshuffling on exhaustion."""

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        self.order: np.ndarray = np.empty(0, dtype=int)
        self.position = 0

    def take(self, count: int) -> List[int]:
        picked: List[int] = []
        while len(picked) < count:
            if self.position >= len(self.order):
                self.order = self.rng.permutation(self.size)
                self.position = 0
            picked.append(int(self.order[self.position]))
            self.position += 1
        return picked


@dataclass(frozen=True)
class EpochPlan:
    """The batches of one epoch, as (pool, index) slots."""

    batches: Tuple[Tuple[BatchSlot, ...], ...]
    shares: Tuple[Tuple[LabelKind, float], ...]

    def __len__(self) -> int:
        return len(self.batches)

    def __iter__(self) -> Iterator[Tuple[BatchSlot, ...]]:
        return iter(self.batches)

    def kind_counts(self) -> Dict[LabelKind, int]:
        counts = {kind: 0 for kind in POOL_ORDER}
        for batch in self.batches:
            for kind, _ in batch:
                counts[kind] += 1
        return counts


def plan_epoch(
    pool_sizes: Mapping[LabelKind, int],
    batch_size: int,
    rng: np.random.Generator,
    min_region: int = 2,
    batch_mix: Optional[Mapping[str, float]] = None,
    steps: Optional[int] = None,
) -> EpochPlan:
    """
    Compose one epoch of stratified batches.

    Defaults to ceil(total pool size / batch_size) steps.
    """
    shares = batch_fractions(pool_sizes, batch_size, min_region, batch_mix)
    if steps is None:
        steps = math.ceil(sum(pool_sizes.get(k, 0) for k in POOL_ORDER) / batch_size)
    cursors = {
        kind: _PoolCursor(pool_sizes.get(kind, 0), rng)
        for kind in POOL_ORDER
        if pool_sizes.get(kind, 0) > 0
    }
    batches = []
    for _ in range(steps):
        counts = draw_counts(shares, batch_size, rng)
        slots: List[BatchSlot] = []
        for kind in POOL_ORDER:
            if counts[kind]:
                slots.extend((kind, i) for i in cursors[kind].take(counts[kind]))
        batches.append(tuple(slots))
    return EpochPlan(
        batches=tuple(batches),
        shares=tuple((kind, shares[kind]) for kind in POOL_ORDER),
    )
