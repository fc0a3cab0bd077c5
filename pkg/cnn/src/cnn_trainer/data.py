"""Reading the exported image tree: manifest, PGM files, folder datasets.

This package deliberately reads the on-disk formats (PGM + manifest JSON)
rather than importing the producer; the files are the interface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from cnn_trainer import TrainerError


def read_pgm(path: Path) -> np.ndarray:
    """Binary-valued P5 file -> 0/1 uint8 matrix (255 = 1)."""
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise TrainerError(f"{path}: not a P5 PGM file")
    try:
        width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    except ValueError:
        raise TrainerError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise TrainerError(f"{path}: unsupported PGM maxval {maxval}")
    raster = parts[4]
    if len(raster) < width * height:
        raise TrainerError(f"{path}: PGM raster truncated")
    pixels = np.frombuffer(raster[: width * height], dtype=np.uint8).reshape(height, width)
    bad = set(np.unique(pixels).tolist()) - {0, 255}
    if bad:
        raise TrainerError(f"{path}: PGM is not binary-valued (pixel values {sorted(bad)})")
    return (pixels == 255).astype(np.uint8)


@dataclass
class TrainManifest:
    """Everything training needs: the image tree plus hyperparameters.

    cluster_means come from the exporter's manifest (mean training label
    per level, None for empty levels) and become the predicted levels.
    """

    root: Path
    levels: int
    n_features: int
    horizon: int
    cluster_means: dict[int, float | None]
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    lr: float = 1e-3

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainerError("epochs must be >= 1")
        if self.batch_size < 1:
            raise TrainerError("batch_size must be >= 1")
        if self.lr < 0:
            raise TrainerError("learning rate must be >= 0")
        for c in range(1, self.levels + 1):
            folder = self.root / str(c)
            if not folder.is_dir():
                raise TrainerError(f"missing class folder {folder} (need 1..{self.levels})")

    @classmethod
    def from_export(cls, root: Path | str, **hyper) -> "TrainManifest":
        root = Path(root)
        manifest_path = root / "manifest.json"
        if not manifest_path.exists():
            raise TrainerError(f"no manifest.json under {root}")
        try:
            obj = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise TrainerError(f"{manifest_path}: invalid JSON: {exc}") from None
        try:
            means = {int(k): v for k, v in obj["cluster_means"].items()}
            return cls(
                root=root,
                levels=int(obj["levels"]),
                n_features=int(obj["n_features"]),
                horizon=int(obj["horizon"]),
                cluster_means=means,
                **hyper,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TrainerError(f"{manifest_path}: missing or malformed field: {exc}") from None


@dataclass
class FolderDataset:
    """All images of a class tree as one tensor, in deterministic order."""

    images: torch.Tensor  # (n, 1, n_features, horizon) float32
    labels: torch.Tensor  # (n,) int64, class index = level - 1
    ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def nonempty_classes(self) -> set[int]:
        return {int(c) + 1 for c in self.labels.unique().tolist()}


def load_class_tree(root: Path | str, levels: int, n_features: int, horizon: int) -> FolderDataset:
    """Read every PGM under root/1..root/levels; order is (level, filename).

    Ill-sized or unreadable files are collected and reported together.
    """
    root = Path(root)
    arrays, labels, ids = [], [], []
    problems = []
    for c in range(1, levels + 1):
        folder = root / str(c)
        if not folder.is_dir():
            raise TrainerError(f"missing class folder {folder} (need 1..{levels})")
        for path in sorted(folder.glob("*.pgm")):
            try:
                bits = read_pgm(path)
            except TrainerError as exc:
                problems.append(str(exc))
                continue
            if bits.shape != (n_features, horizon):
                problems.append(
                    f"{path}: image is {bits.shape[0]}x{bits.shape[1]}, "
                    f"expected {n_features}x{horizon}"
                )
                continue
            arrays.append(bits)
            labels.append(c - 1)
            ids.append(path.stem)
    if problems:
        listing = "\n  ".join(problems)
        raise TrainerError(f"{len(problems)} unusable image(s):\n  {listing}")
    if len(set(ids)) != len(ids):
        raise TrainerError(f"duplicate image ids under {root}")
    if not arrays:
        raise TrainerError(f"no images found under {root}")
    images = torch.from_numpy(np.stack(arrays)).to(torch.float32).unsqueeze(1)
    return FolderDataset(images=images, labels=torch.tensor(labels, dtype=torch.int64), ids=ids)
