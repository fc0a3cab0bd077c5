"""Training, checkpointing, and CSV prediction."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch

from cnn_trainer import TrainerError, __version__
from cnn_trainer.data import FolderDataset, TrainManifest, load_class_tree, read_pgm
from cnn_trainer.model import LevelNet, build_model

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


def apply_determinism(seed: int, deterministic: bool) -> None:
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def train_cnn(manifest: TrainManifest, deterministic: bool = False) -> dict:
    """Train the reference net over the manifest's class tree.

    Returns an in-memory checkpoint dict (save with save_checkpoint).  With
    `deterministic`, equal seeds reproduce the weights bit for bit.
    """
    apply_determinism(manifest.seed, deterministic)
    data = load_class_tree(
        manifest.root, manifest.levels, manifest.n_features, manifest.horizon
    )
    nonempty = data.nonempty_classes
    if len(nonempty) < 2:
        raise TrainerError(f"need >=2 classes with images, got {len(nonempty)}")
    for c in nonempty:
        if manifest.cluster_means.get(c) is None:
            raise TrainerError(f"class {c} has images but no mean label in the manifest")

    model = build_model(manifest.levels, manifest.n_features, manifest.horizon, manifest.seed)
    optimizer = torch.optim.SGD(model.parameters(), lr=manifest.lr)
    loss_fn = torch.nn.CrossEntropyLoss()
    shuffler = torch.Generator().manual_seed(manifest.seed)

    model.train()
    n = len(data)
    for epoch in range(1, manifest.epochs + 1):
        order = torch.randperm(n, generator=shuffler)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, manifest.batch_size):
            idx = order[start : start + manifest.batch_size]
            batch, target = data.images[idx], data.labels[idx]
            optimizer.zero_grad()
            logits = model(batch)
            loss = loss_fn(logits, target)
            loss.backward()
            optimizer.step()
            total_loss += float(loss.detach()) * len(idx)
            correct += int((logits.argmax(dim=1) == target).sum())
        logger.info(
            "epoch %d/%d: loss=%.6f train_acc=%.4f",
            epoch, manifest.epochs, total_loss / n, correct / n,
        )

    return {
        "format_version": CHECKPOINT_VERSION,
        "trainer_version": __version__,
        "state_dict": model.state_dict(),
        "levels": manifest.levels,
        "n_features": manifest.n_features,
        "horizon": manifest.horizon,
        "cluster_means": dict(manifest.cluster_means),
        "hyper": {
            "epochs": manifest.epochs,
            "batch_size": manifest.batch_size,
            "seed": manifest.seed,
            "lr": manifest.lr,
        },
    }


def save_checkpoint(checkpoint: dict, path: Path | str) -> None:
    torch.save(checkpoint, Path(path))


def load_checkpoint(path: Path | str) -> dict:
    path = Path(path)
    if not path.exists():
        raise TrainerError(f"no such checkpoint: {path}")
    checkpoint = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(checkpoint, dict) or checkpoint.get("format_version") != CHECKPOINT_VERSION:
        raise TrainerError(f"{path}: unsupported checkpoint format")
    return checkpoint


def restore_model(checkpoint: dict) -> LevelNet:
    model = LevelNet(checkpoint["levels"], checkpoint["n_features"], checkpoint["horizon"])
    model.load_state_dict(checkpoint["state_dict"])
    model.eval()
    return model


def _collect_images(images_dir: Path) -> list[Path]:
    paths = sorted(images_dir.rglob("*.pgm"), key=lambda p: p.stem)
    if not paths:
        raise TrainerError(f"no .pgm images under {images_dir}")
    stems = [p.stem for p in paths]
    if len(set(stems)) != len(stems):
        raise TrainerError(f"duplicate image ids under {images_dir}")
    return paths


def predict_cnn(checkpoint: dict, images_dir: Path | str, batch_size: int = 256) -> list[tuple[str, float]]:
    """Predict a level for every PGM under images_dir (recursively).

    The estimate for an image is the mean training label of its argmax
    class; rows come back sorted by id.
    """
    images_dir = Path(images_dir)
    model = restore_model(checkpoint)
    means = {int(k): v for k, v in checkpoint["cluster_means"].items()}
    paths = _collect_images(images_dir)

    rows: list[tuple[str, float]] = []
    for start in range(0, len(paths), batch_size):
        chunk = paths[start : start + batch_size]
        bits = []
        for path in chunk:
            img = read_pgm(path)
            if img.shape != (checkpoint["n_features"], checkpoint["horizon"]):
                raise TrainerError(
                    f"{path}: image is {img.shape[0]}x{img.shape[1]}, expected "
                    f"{checkpoint['n_features']}x{checkpoint['horizon']}"
                )
            bits.append(img)
        batch = torch.from_numpy(np.stack(bits)).to(torch.float32).unsqueeze(1)
        scores = model.scores(batch)
        classes = scores.argmax(dim=1) + 1
        for path, c in zip(chunk, classes.tolist()):
            mean = means.get(int(c))
            if mean is None:
                raise TrainerError(
                    f"{path}: predicted class {int(c)} has no mean training label"
                )
            rows.append((path.stem, float(mean)))
    rows.sort(key=lambda r: r[0])
    return rows


def predictions_csv(rows: list[tuple[str, float]]) -> str:
    """The evaluator's wire format: mandatory header, one row per image."""
    lines = ["id,xi_hat"]
    lines.extend(f"{sample_id},{value!r}" for sample_id, value in rows)
    return "\n".join(lines) + "\n"


def predicted_classes(checkpoint: dict, dataset: FolderDataset) -> torch.Tensor:
    """Argmax level (1-based) for every image of an in-memory dataset."""
    model = restore_model(checkpoint)
    return model.scores(dataset.images).argmax(dim=1) + 1
