"""
On-disk dataset format.

    <root>/dataset.json            spec, counts and config hash
    <root>/<split>/annotations.jsonl
    <root>/<split>/<sample_id>.pgm 8-bit grayscale

One JSON line per sample: {sample_id, label_kind, boxes, break_centers}.
Images are quantized to 8 bits at generation time, so a save/load round
trip reproduces them exactly.
"""

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List

import numpy as np
from PIL import Image

from fracture_distill.config import config_hash
from fracture_distill.data.synthetic import (
    BoundingBox,
    DatasetSpec,
    LabelKind,
    Sample,
    SyntheticDataset,
)
from fracture_distill.errors import ConfigError
from fracture_distill.writers.base import BaseWriter

logger = logging.getLogger(__name__)

MANIFEST = "dataset.json"
ANNOTATIONS = "annotations.jsonl"


class DatasetWriter(BaseWriter):
    """Write a SyntheticDataset as PGM images plus JSON-lines annotations."""

    def __init__(self, output_dir: Path, dataset: SyntheticDataset):
        super().__init__(output_dir, config_hash=config_hash(asdict(dataset.spec)))
        self.dataset = dataset

    def write_split(self, split: str, samples: List[Sample]) -> None:
        self.create_directory(Path(split))
        lines = []
        for sample in samples:
            pixels = np.round(sample.image * 255.0).astype(np.uint8)
            path = self.output_dir / split / f"{sample.sample_id}.pgm"
            Image.fromarray(pixels).save(path, format="PPM")
            self.register_file(path.relative_to(self.output_dir))
            lines.append(
                json.dumps(
                    {
                        "sample_id": sample.sample_id,
                        "label_kind": sample.label_kind.value,
                        "boxes": [b.as_list() for b in sample.boxes],
                        "break_centers": [list(c) for c in sample.break_centers],
                    },
                    sort_keys=True,
                )
            )
        self.write_file(Path(split) / ANNOTATIONS, "".join(line + "\n" for line in lines))

    def write(self) -> Path:
        self.create_directory()
        for split, samples in self.dataset.splits().items():
            self.write_split(split, samples)
        self.write_json(
            Path(MANIFEST),
            {"spec": asdict(self.dataset.spec), "counts": self.dataset.counts()},
        )
        logger.info("Wrote dataset to %s (%d files)", self.output_dir, len(self.created_files))
        return self.output_dir


def save_dataset(dataset: SyntheticDataset, root: Path) -> Path:
    return DatasetWriter(root, dataset).write()


def _read_split(directory: Path) -> List[Sample]:
    annotations = directory / ANNOTATIONS
    if not annotations.exists():
        raise ConfigError(f"missing annotations file: {annotations}")
    samples = []
    with open(annotations, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            record = json.loads(line)
            with Image.open(directory / f"{record['sample_id']}.pgm") as img:
                pixels = np.asarray(img.convert("L"), dtype=np.uint8)
            samples.append(
                Sample(
                    sample_id=record["sample_id"],
                    image=pixels.astype(np.float32) / np.float32(255.0),
                    label_kind=LabelKind(record["label_kind"]),
                    boxes=tuple(BoundingBox.from_list(b) for b in record["boxes"]),
                    break_centers=tuple(
                        (int(x), int(y)) for x, y in record.get("break_centers", [])
                    ),
                )
            )
    return samples


def load_dataset(root: Path) -> SyntheticDataset:
    """Read a dataset written by `save_dataset`."""
    root = Path(root)
    manifest_path = root / MANIFEST
    if not manifest_path.exists():
        raise ConfigError(f"not a dataset directory (no {MANIFEST}): {root}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    spec = DatasetSpec(**manifest["spec"])

    train = _read_split(root / "train")
    by_kind: Dict[LabelKind, List[Sample]] = {kind: [] for kind in LabelKind}
    for sample in train:
        by_kind[sample.label_kind].append(sample)

    return SyntheticDataset(
        spec=spec,
        region=by_kind[LabelKind.REGION],
        positive=by_kind[LabelKind.POSITIVE],
        negative=by_kind[LabelKind.NEGATIVE],
        val=_read_split(root / "val"),
        test=_read_split(root / "test"),
    )
