"""Reference architecture: two conv/pool stages and a dense level head.

conv 3x3 x8 + ReLU -> 2x2 max-pool -> conv 3x3 x16 + ReLU -> 2x2 max-pool
-> flatten -> linear -> levels-way softmax.  Pooling gives the tolerance to
small call-time shifts that the per-cell detectors lack.
"""

from __future__ import annotations

import torch
from torch import nn

from cnn_trainer import TrainerError


class LevelNet(nn.Module):
    def __init__(self, levels: int, n_features: int, horizon: int):
        super().__init__()
        if levels < 2:
            raise TrainerError("need at least 2 levels")
        if n_features < 4 or horizon < 4:
            raise TrainerError(
                f"images of {n_features}x{horizon} are too small for two 2x2 pools"
            )
        self.levels = levels
        self.n_features = n_features
        self.horizon = horizon
        self.features = nn.Sequential(
            nn.Conv2d(1, 8, kernel_size=3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(8, 16, kernel_size=3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
        )
        flat = 16 * (n_features // 2 // 2) * (horizon // 2 // 2)
        self.head = nn.Linear(flat, levels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.features(x)
        return self.head(x.flatten(1))

    @torch.no_grad()
    def scores(self, x: torch.Tensor) -> torch.Tensor:
        """Class probabilities (softmax over the level logits)."""
        return torch.softmax(self.forward(x), dim=1)


def build_model(levels: int, n_features: int, horizon: int, seed: int) -> LevelNet:
    """Seeded construction: equal seeds give identical initial weights."""
    torch.manual_seed(seed)
    return LevelNet(levels, n_features, horizon)
