"""Trace-to-image encoding, static flattening, dead-area reduction, PGM export.

A binary image is the n_features x horizon 0/1 matrix of a trace: cell
(feature, time) is 1 iff that event occurred.  Images are exported as raw
PGM (P5) files, one folder per target cluster, for the deep-learning
component; the format is bit-exact and byte-deterministic.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from imago import kernels
from imago.errors import DataFormatError, ValidationError
from imago.trace import Dimensions, FeatureEvent, MaliciousnessLevel, Trace, assign_cluster

if TYPE_CHECKING:
    from imago.cluster import ClusterModel
    from imago.dataset import Dataset

MANIFEST_SCHEMA_VERSION = 1

_SAFE_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


class BinaryImage:
    """Dense 0/1 matrix form of a trace, with cached bit-packed view.

    Memory is exactly n_features * horizon cells; the packed view adds
    ceil(n_cells / 64) words on first use.
    """

    __slots__ = ("bits", "_packed", "_flat_events")

    def __init__(self, bits: np.ndarray):
        arr = np.ascontiguousarray(bits, dtype=np.uint8)
        if arr.ndim != 2:
            raise ValidationError(f"binary image must be 2-D, got shape {arr.shape}")
        if arr.size and int(arr.max()) > 1:
            raise ValidationError("binary image cells must be 0 or 1")
        self.bits = arr
        self._packed = None
        self._flat_events = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @property
    def packed(self) -> np.ndarray:
        if self._packed is None:
            self._packed = kernels.pack_bits(self.bits.ravel())
        return self._packed

    @property
    def flat_events(self) -> np.ndarray:
        """Row-major indices of the set cells (int64, ascending)."""
        if self._flat_events is None:
            self._flat_events = np.flatnonzero(self.bits.ravel()).astype(np.int64)
        return self._flat_events

    def popcount(self) -> int:
        return int(self.flat_events.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryImage):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __repr__(self) -> str:
        return f"BinaryImage(shape={self.bits.shape}, ones={self.popcount()})"


def encode(trace: Trace, dims: Dimensions) -> BinaryImage:
    """Place each event of `trace` as a 1 in an n_features x horizon matrix."""
    bits = np.zeros((dims.n_features, dims.horizon), dtype=np.uint8)
    for ev in trace.events:
        if not dims.contains(ev):
            raise ValidationError(
                f"trace {trace.id!r}: event ({ev.feature}, {ev.time}) outside "
                f"{dims.n_features}x{dims.horizon}"
            )
        bits[ev.feature - 1, ev.time - 1] = 1
    return BinaryImage(bits)


def flatten_static(trace: Trace, dims: Dimensions) -> np.ndarray:
    """Static feature vector: component f is 1 iff feature f occurs at any time.

    This drops the call times entirely, the degraded representation used to
    show that the image form carries information the static vector loses.
    """
    vec = np.zeros(dims.n_features, dtype=np.uint8)
    for ev in trace.events:
        if not dims.contains(ev):
            raise ValidationError(
                f"trace {trace.id!r}: event ({ev.feature}, {ev.time}) outside "
                f"{dims.n_features}x{dims.horizon}"
            )
        vec[ev.feature - 1] = 1
    return vec


@dataclass(frozen=True)
class ReductionMask:
    """Rows/columns that are all-black across the entire clustering image.

    dead_features: 1-based feature rows never set in any cluster slice.
    dead_times: 1-based time columns never set in any slice (the residue
    t is dead only if column t is zero in every one of the levels slices).
    Masks are computed on training data and applied unchanged to test
    images.
    """

    dead_features: frozenset[int]
    dead_times: frozenset[int]

    def kept_features(self, dims: Dimensions) -> list[int]:
        return [f for f in range(1, dims.n_features + 1) if f not in self.dead_features]

    def kept_times(self, dims: Dimensions) -> list[int]:
        return [t for t in range(1, dims.horizon + 1) if t not in self.dead_times]

    def reduced_dims(self, dims: Dimensions) -> Dimensions:
        kept_f = dims.n_features - len(self.dead_features)
        kept_t = dims.horizon - len(self.dead_times)
        if kept_f < 1 or kept_t < 1:
            raise ValidationError("reduction mask removes every row or every column")
        return Dimensions(kept_f, kept_t, dims.levels)

    def apply_to_bits(self, bits: np.ndarray) -> np.ndarray:
        """Delete dead rows/columns from a dense 0/1 matrix."""
        n_f, horizon = bits.shape
        keep_r = [f - 1 for f in range(1, n_f + 1) if f not in self.dead_features]
        keep_c = [t - 1 for t in range(1, horizon + 1) if t not in self.dead_times]
        return np.ascontiguousarray(bits[np.ix_(keep_r, keep_c)])

    def apply_to_trace(self, trace: Trace, dims: Dimensions) -> tuple[Trace, Dimensions]:
        """Drop events in dead rows/columns and renumber the survivors."""
        f_map = {f: i + 1 for i, f in enumerate(self.kept_features(dims))}
        t_map = {t: i + 1 for i, t in enumerate(self.kept_times(dims))}
        events = [
            FeatureEvent(f_map[ev.feature], t_map[ev.time])
            for ev in trace.events
            if ev.feature in f_map and ev.time in t_map
        ]
        return Trace(trace.id, trace.label, frozenset(events)), self.reduced_dims(dims)

    def to_jsonable(self) -> dict:
        return {
            "dead_features": sorted(self.dead_features),
            "dead_times": sorted(self.dead_times),
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "ReductionMask":
        return cls(frozenset(obj["dead_features"]), frozenset(obj["dead_times"]))


def compute_reduction_mask(ci: np.ndarray, dims: Dimensions) -> ReductionMask:
    """Find the all-zero rows and the time residues dead in every slice of CI.

    `ci` is the n_features x (horizon * levels) clustering image.
    """
    expected = (dims.n_features, dims.horizon * dims.levels)
    if ci.shape != expected:
        raise ValidationError(f"clustering image shape {ci.shape} != {expected}")
    sliced = ci.reshape(dims.n_features, dims.levels, dims.horizon)
    dead_f = frozenset(int(f) + 1 for f in np.flatnonzero(sliced.sum(axis=(1, 2)) == 0))
    dead_t = frozenset(int(t) + 1 for t in np.flatnonzero(sliced.sum(axis=(0, 1)) == 0))
    return ReductionMask(dead_f, dead_t)


# --- PGM (P5) serialization ------------------------------------------------
# Width = horizon, height = n_features, maxval 255; 255 = white = bit set.


def pgm_bytes(bits: np.ndarray) -> bytes:
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    if bits.ndim != 2:
        raise ValidationError("PGM export expects a 2-D matrix")
    height, width = bits.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    return header + (bits * np.uint8(255)).tobytes()


def write_pgm(path: Path | str, bits: np.ndarray) -> None:
    Path(path).write_bytes(pgm_bytes(bits))


def read_pgm(path: Path | str) -> np.ndarray:
    """Read a binary-valued P5 file back into a 0/1 uint8 matrix."""
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise DataFormatError("not a P5 PGM file", path=path)
    try:
        width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    except ValueError:
        raise DataFormatError("malformed PGM header", path=path) from None
    if maxval != 255:
        raise DataFormatError(f"unsupported PGM maxval {maxval}", path=path)
    raster = parts[4][: width * height]
    if len(raster) != width * height:
        raise DataFormatError("PGM raster truncated", path=path)
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    values = set(np.unique(pixels).tolist())
    if not values <= {0, 255}:
        raise DataFormatError(f"PGM is not binary-valued: pixel values {sorted(values)}", path=path)
    return (pixels == 255).astype(np.uint8)


def export_images(
    dataset: "Dataset",
    out_dir: Path | str,
    model: "ClusterModel | None" = None,
    reduce: bool = False,
) -> dict:
    """Write one PGM per trace under out_dir/<target cluster>/<id>.pgm.

    All cluster folders 1..levels are created, even when empty.  The
    manifest records per-image path/cluster/label plus per-cluster mean
    training labels when a trained model is supplied (null otherwise);
    with `reduce`, the model's dead rows/columns are removed from every
    exported image and the mask is recorded.
    """
    from imago.cluster import compute_model_reduction_mask

    dims = dataset.dims
    levels = dims.levels
    out_dir = Path(out_dir)
    mask = None
    if reduce:
        if model is None:
            raise ValidationError("--reduce needs a trained model to derive the mask from")
        mask = compute_model_reduction_mask(model)
    export_dims = mask.reduced_dims(dims) if mask else dims

    for c in range(1, levels + 1):
        (out_dir / str(c)).mkdir(parents=True, exist_ok=True)

    cluster_means: dict[str, float | None] = {}
    for c in range(1, levels + 1):
        mean = None
        if model is not None and model.cluster_size(c) > 0:
            mean = model.cluster_mean(c)
        cluster_means[str(c)] = mean

    images: dict[str, dict] = {}
    for trace in dataset.traces:
        if trace.id in images:
            raise ValidationError(f"duplicate trace id in export: {trace.id!r}")
        if not _SAFE_ID.match(trace.id):
            raise ValidationError(
                f"trace id {trace.id!r} is not filesystem-safe "
                "(allowed: letters, digits, '.', '_', '-')"
            )
        tc = assign_cluster(trace.label, levels)
        bits = encode(trace, dims).bits
        if mask is not None:
            bits = mask.apply_to_bits(bits)
        rel = f"{tc}/{trace.id}.pgm"
        write_pgm(out_dir / rel, bits)
        images[trace.id] = {
            "path": rel,
            "tc": tc,
            "xi": float(trace.label),
            "mean_label": cluster_means[str(tc)],
        }

    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "n_features": export_dims.n_features,
        "horizon": export_dims.horizon,
        "levels": levels,
        "reduction": mask.to_jsonable() if mask else None,
        "cluster_means": cluster_means,
        "images": images,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest
