"""Shared planted-dataset fixtures.

The heavy fixtures (200-image planted runs) are session-scoped; tests must
copy anything they mutate.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from vlpseudo.datasets import DatasetManifest, load_image, make_planted_dataset
from vlpseudo.encoders import (
    EmbeddingRecord,
    PlantedEncoder,
    TextEmbeddingMatrix,
    compute_record,
    encode_class_prompts,
)
from vlpseudo.metrics import GroundTruthSet


@dataclass
class PlantedRun:
    manifest: DatasetManifest
    encoder: PlantedEncoder
    text: TextEmbeddingMatrix
    records: list[EmbeddingRecord]
    truth: GroundTruthSet
    images: dict[str, np.ndarray]

    @property
    def image_ids(self) -> list[str]:
        return self.manifest.image_ids

    @property
    def features(self) -> np.ndarray:
        return np.stack([r.global_embedding for r in self.records]).astype(np.float64)


def build_planted_run(
    out_dir: Path,
    num_images: int,
    seed: int,
    noise: float = 0.35,
    split: str = "train",
    encoder_seed: int = 100,
) -> PlantedRun:
    manifest = make_planted_dataset(
        out_dir, num_images=num_images, num_classes=10, seed=seed, split=split
    )
    encoder = PlantedEncoder(num_classes=10, dim=64, seed=encoder_seed,
                             noise=noise, temperature=0.1)
    text = encode_class_prompts(encoder, manifest.class_names)
    images = {i: load_image(p) for i, p in zip(manifest.image_ids, manifest.image_paths)}
    records = [compute_record(encoder, i, images[i], 3, 3) for i in manifest.image_ids]
    return PlantedRun(manifest=manifest, encoder=encoder, text=text,
                      records=records, truth=manifest.load_truth(), images=images)


@pytest.fixture(scope="session")
def planted_run(tmp_path_factory) -> PlantedRun:
    """200 planted training images: one dominant class plus 1-2 cell extras."""
    return build_planted_run(tmp_path_factory.mktemp("planted_train"),
                             num_images=200, seed=7)


@pytest.fixture(scope="session")
def planted_holdout(tmp_path_factory) -> PlantedRun:
    return build_planted_run(tmp_path_factory.mktemp("planted_val"),
                             num_images=100, seed=507, split="val")


@pytest.fixture(scope="session")
def small_encoder() -> PlantedEncoder:
    """Low-noise encoder for crisp per-image assertions."""
    return PlantedEncoder(num_classes=10, dim=64, seed=0, noise=0.05, temperature=0.1)
