"""Synthetic, trivially separable datasets for service tests."""

from __future__ import annotations

import random
from pathlib import Path

import numpy as np
import pytest
from PIL import Image


def _solid_noisy_image(rng: random.Random, low: int, high: int, size: int = 24) -> Image.Image:
    values = np.array(
        [[rng.randint(low, high) for _ in range(size)] for _ in range(size)], dtype=np.uint8
    )
    return Image.fromarray(values, mode="L")


def build_synthetic_dataset(
    root: Path,
    n_train_per_class: int = 20,
    n_val_per_class: int = 8,
    dataset_id: str = "synthetic-xray",
    seed: int = 1234,
) -> Path:
    """Two classes an untuned one-layer model can separate: bright "normal"
    images vs. dark "dense" ones. Returns the manifest path."""
    rng = random.Random(seed)
    images = root / "images"
    images.mkdir(parents=True, exist_ok=True)
    lines = [
        f"dataset_id={dataset_id}",
        "modality=xray",
        "labels=normal,dense",
    ]
    counter = 0
    for label, low, high in (("normal", 185, 250), ("dense", 5, 70)):
        for split, count in (("train", n_train_per_class), ("val", n_val_per_class)):
            for _ in range(count):
                sample_id = f"s{counter:04d}"
                counter += 1
                rel = f"images/{sample_id}.png"
                _solid_noisy_image(rng, low, high).save(root / rel)
                lines.append(f"{sample_id}\t{rel}\t{label}\t{split}")
    manifest_path = root / "manifest.txt"
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest_path


@pytest.fixture(scope="session")
def synthetic_manifest(tmp_path_factory) -> Path:
    return build_synthetic_dataset(tmp_path_factory.mktemp("synthetic"))
