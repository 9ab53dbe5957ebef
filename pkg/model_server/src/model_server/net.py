"""A deliberately small convolutional classifier.

Fidelity to any published architecture is a non-goal; the network exists
to exercise the serving protocol and the CNN-vs-LLM comparison plumbing.
"""

from __future__ import annotations

import torch
from torch import nn


class SmallConvNet(nn.Module):
    """Two conv blocks, global average pooling, one linear head."""

    def __init__(self, n_classes: int):
        super().__init__()
        if n_classes < 2:
            raise ValueError(f"need at least 2 classes, got {n_classes}")
        self.features = nn.Sequential(
            nn.Conv2d(1, 8, kernel_size=3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(8, 16, kernel_size=3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.AdaptiveAvgPool2d(4),
        )
        self.head = nn.Linear(16 * 4 * 4, n_classes)
        self.n_classes = n_classes

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x).flatten(1))
