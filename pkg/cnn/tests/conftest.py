"""Fixtures that drive the primary CLI (subprocess) to build real inputs:
the exported image trees are the interface under test."""

from __future__ import annotations

import json
import shutil
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

SEPARABLE_SPEC = {
    "dims": {"n_features": 64, "horizon": 16, "levels": 8},
    "per_cluster_count": 200,
    "signature_pixels": 6,
    "noise_flip_prob": 0.0,
    "label_jitter": 0.15,
    "seed": 20220301,
}


def imago(*args):
    exe = shutil.which("imago")
    if exe is None:
        pytest.skip("imago CLI not installed")
    result = subprocess.run(
        [exe, *map(str, args)], capture_output=True, text=True
    )
    assert result.returncode == 0, f"imago {args[0]} failed:\n{result.stderr}"
    return result


def write_pgm(path: Path, bits: np.ndarray) -> None:
    h, w = bits.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + (bits * np.uint8(255)).tobytes())


def make_tree(root: Path, levels: int, per_class: dict[int, list[np.ndarray]],
              means: dict[int, float | None], n_features: int, horizon: int) -> Path:
    """Hand-built export tree for unit tests."""
    for c in range(1, levels + 1):
        (root / str(c)).mkdir(parents=True, exist_ok=True)
    images = {}
    for c, imgs in per_class.items():
        for i, bits in enumerate(imgs):
            name = f"c{c}-{i:03d}"
            write_pgm(root / str(c) / f"{name}.pgm", bits)
            images[name] = {"path": f"{c}/{name}.pgm", "tc": c,
                            "xi": means.get(c) or 0.5, "mean_label": means.get(c)}
    manifest = {
        "schema_version": 1,
        "n_features": n_features,
        "horizon": horizon,
        "levels": levels,
        "reduction": None,
        "cluster_means": {str(c): means.get(c) for c in range(1, levels + 1)},
        "images": images,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return root


@dataclass
class Pipeline:
    base: Path
    train_images: Path
    test_images: Path
    test_jsonl: Path
    levels: int
    ca_mcae: float


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory) -> Pipeline:
    base = tmp_path_factory.mktemp("separable")
    spec_path = base / "spec.json"
    spec_path.write_text(json.dumps(SEPARABLE_SPEC))
    levels = SEPARABLE_SPEC["dims"]["levels"]

    imago("synth", "--spec", spec_path, "--out", base / "data.jsonl")
    imago("split", "--in", base / "data.jsonl", "--test-frac", "0.2", "--seed", "4096")
    imago("train", "--in", base / "data.train.jsonl", "--levels", levels,
          "--out", base / "model.bin")
    imago("export-images", "--in", base / "data.train.jsonl", "--levels", levels,
          "--out-dir", base / "images" / "train", "--model", base / "model.bin")
    imago("export-images", "--in", base / "data.test.jsonl", "--levels", levels,
          "--out-dir", base / "images" / "test", "--model", base / "model.bin")
    imago("eval", "--train", base / "data.train.jsonl", "--test", base / "data.test.jsonl",
          "--levels", levels, "--approach", "ca", "--out", base / "ca.json")

    ca_mcae = json.loads((base / "ca.json").read_text())["approaches"]["ca"]["mcae"]
    return Pipeline(
        base=base,
        train_images=base / "images" / "train",
        test_images=base / "images" / "test",
        test_jsonl=base / "data.test.jsonl",
        levels=levels,
        ca_mcae=ca_mcae,
    )
