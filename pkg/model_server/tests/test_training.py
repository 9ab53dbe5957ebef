"""Training behavior on synthetic separable data."""

from __future__ import annotations

import pytest
import torch

from model_server.manifest import ManifestFormatError, read_manifest
from model_server.net import SmallConvNet
from model_server.training import Hyperparameters, train

from conftest import build_synthetic_dataset

FAST = Hyperparameters(epochs=6, batch_size=8, seed=3)


class TestNet:
    def test_output_dimension_matches_label_count(self):
        for n in (2, 4, 6):
            model = SmallConvNet(n)
            out = model(torch.zeros(3, 1, 32, 32))
            assert out.shape == (3, n)

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            SmallConvNet(1)


class TestTrain:
    def test_separable_dataset_reaches_val_accuracy(self, synthetic_manifest, tmp_path):
        result = train(synthetic_manifest, FAST, tmp_path / "model.pt")
        assert result.val_accuracy >= 0.9
        assert result.weights_path.is_file()
        assert result.weights_path.with_suffix(".json").is_file()
        assert result.label_set == ("normal", "dense")

    def test_empty_train_split_rejected(self, tmp_path):
        manifest = build_synthetic_dataset(tmp_path, n_train_per_class=0, n_val_per_class=2)
        with pytest.raises(ValueError, match="train"):
            train(manifest, FAST, tmp_path / "model.pt")

    def test_empty_val_split_rejected(self, tmp_path):
        manifest = build_synthetic_dataset(tmp_path, n_train_per_class=2, n_val_per_class=0)
        with pytest.raises(ValueError, match="val"):
            train(manifest, FAST, tmp_path / "model.pt")

    def test_label_mismatch_rejected(self, tmp_path):
        manifest = build_synthetic_dataset(tmp_path, n_train_per_class=2, n_val_per_class=1)
        text = manifest.read_text().replace("\tdense\t", "\tghost\t")
        manifest.write_text(text)
        with pytest.raises(ManifestFormatError, match="ghost"):
            read_manifest(manifest)

    def test_fixed_seed_reproduces_val_accuracy(self, synthetic_manifest, tmp_path):
        first = train(synthetic_manifest, FAST, tmp_path / "a.pt")
        second = train(synthetic_manifest, FAST, tmp_path / "b.pt")
        assert first.val_accuracy == second.val_accuracy
