"""Fine-tuning of per-dataset classifiers from manifest-described images."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import nn

from .manifest import Manifest, read_manifest
from .net import SmallConvNet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Hyperparameters:
    epochs: int = 8
    batch_size: int = 16
    learning_rate: float = 1e-3
    input_size: int = 32
    seed: int = 0


@dataclass(frozen=True)
class TrainResult:
    weights_path: Path
    val_accuracy: float
    dataset_id: str
    label_set: tuple[str, ...]
    input_size: int


def load_image_tensor(path: Path, input_size: int) -> torch.Tensor:
    """Grayscale, resize, scale to [0, 1]; shape (1, s, s)."""
    with Image.open(path) as img:
        resized = img.convert("L").resize((input_size, input_size), Image.BILINEAR)
        array = np.asarray(resized, dtype=np.float32) / 255.0
    return torch.from_numpy(array).unsqueeze(0)


def _split_tensors(manifest: Manifest, split: str, input_size: int) -> tuple[torch.Tensor, torch.Tensor]:
    samples = manifest.samples_for_split(split)
    if not samples:
        raise ValueError(f"manifest {manifest.dataset_id!r} has no samples in split {split!r}")
    images = torch.stack(
        [load_image_tensor(manifest.root_dir / s.image_path, input_size) for s in samples]
    )
    labels = torch.tensor([manifest.label_index(s.ground_truth) for s in samples], dtype=torch.long)
    return images, labels


@torch.no_grad()
def _accuracy(model: nn.Module, images: torch.Tensor, labels: torch.Tensor) -> float:
    model.eval()
    predictions = model(images).argmax(dim=1)
    return (predictions == labels).float().mean().item()


def train(
    manifest_path: str | Path,
    hparams: Hyperparameters = Hyperparameters(),
    out_path: str | Path = "model.pt",
) -> TrainResult:
    """Train a small classifier on the manifest's train split and write a
    weights file with an embedded metadata record (plus a sidecar JSON).

    Deterministic for a fixed seed on a fixed machine. Raises ValueError
    when the train or val split is empty or a label falls outside the
    label set.
    """
    manifest = read_manifest(manifest_path)
    torch.manual_seed(hparams.seed)
    train_x, train_y = _split_tensors(manifest, "train", hparams.input_size)
    val_x, val_y = _split_tensors(manifest, "val", hparams.input_size)

    model = SmallConvNet(len(manifest.label_set))
    optimizer = torch.optim.Adam(model.parameters(), lr=hparams.learning_rate)
    loss_fn = nn.CrossEntropyLoss()
    generator = torch.Generator().manual_seed(hparams.seed)

    for epoch in range(hparams.epochs):
        model.train()
        order = torch.randperm(len(train_x), generator=generator)
        epoch_loss = 0.0
        for start in range(0, len(order), hparams.batch_size):
            batch = order[start : start + hparams.batch_size]
            optimizer.zero_grad()
            loss = loss_fn(model(train_x[batch]), train_y[batch])
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(batch)
        logger.info("epoch %d: loss=%.4f val_acc=%.4f", epoch + 1,
                    epoch_loss / len(train_x), _accuracy(model, val_x, val_y))

    val_accuracy = _accuracy(model, val_x, val_y)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    metadata = {
        "dataset_id": manifest.dataset_id,
        "label_set": list(manifest.label_set),
        "input_size": hparams.input_size,
        "val_accuracy": val_accuracy,
        "hyperparameters": asdict(hparams),
    }
    torch.save({"state_dict": model.state_dict(), "metadata": metadata}, out_path)
    out_path.with_suffix(".json").write_text(json.dumps(metadata, indent=2) + "\n", encoding="utf-8")
    return TrainResult(
        weights_path=out_path,
        val_accuracy=val_accuracy,
        dataset_id=manifest.dataset_id,
        label_set=manifest.label_set,
        input_size=hparams.input_size,
    )
