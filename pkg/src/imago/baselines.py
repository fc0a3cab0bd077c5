"""Comparison detectors: first-nearest-neighbour over image L1 distance,
lattice associative memory (plus its kernel-filtered variant), and the
fixed-level sweep."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from imago import kernels as bitops
from imago._parallel import ordered_map
from imago.cluster import ClusterModel, kernels as model_kernels
from imago.encoder import BinaryImage, encode
from imago.errors import DataFormatError, ImagoError, ValidationError
from imago.trace import Dimensions, Trace, assign_cluster

LAM_FORMAT_VERSION = 1


class NeighborIndex:
    """The whole trainset, bit-packed, in dataset order.

    Storing every image is the method: a query is answered by scanning all
    members and returning the label of the nearest (ties to the smallest
    index).
    """

    def __init__(self, dims: Dimensions, packed: np.ndarray, labels: np.ndarray):
        if packed.shape[0] != labels.shape[0]:
            raise ValidationError("packed rows and labels must have equal length")
        self.dims = dims
        self.packed = np.ascontiguousarray(packed, dtype=np.uint64)
        self.labels = np.ascontiguousarray(labels, dtype=np.float64)

    @classmethod
    def build(cls, traces: Sequence[Trace], dims: Dimensions) -> "NeighborIndex":
        if len(traces) == 0:
            raise ValidationError("cannot build a neighbour index from an empty trainset")
        rows = np.zeros((len(traces), dims.n_cells), dtype=np.uint8)
        labels = np.empty(len(traces), dtype=np.float64)
        for k, tr in enumerate(traces):
            rows[k] = encode(tr, dims).bits.ravel()
            labels[k] = float(tr.label)
        return cls(dims, bitops.pack_rows(rows), labels)

    def __len__(self) -> int:
        return int(self.packed.shape[0])


def fnn_distances(index: NeighborIndex, image: BinaryImage) -> np.ndarray:
    if image.shape != (index.dims.n_features, index.dims.horizon):
        raise ValidationError(
            f"image shape {image.shape} does not match index "
            f"({index.dims.n_features}, {index.dims.horizon})"
        )
    return bitops.hamming_scan(index.packed, image.packed)


def fnn_predict(index: NeighborIndex, image: BinaryImage) -> float:
    """Label of the L1-nearest trainset member; ties to the smallest index."""
    if len(index) == 0:
        raise ValidationError("neighbour index is empty")
    d = fnn_distances(index, image)
    return float(index.labels[int(np.argmin(d))])


def fnn_predict_many(
    index: NeighborIndex, images: Sequence[BinaryImage], workers: int | None = None
) -> list[float]:
    return ordered_map(lambda img: fnn_predict(index, img), images, workers)


@dataclass(frozen=True)
class LatticeMemory:
    """Element-wise max of (label - pixel) over the trainset.

    Every cell lies in [max(labels) - 1, max(labels)]; prediction is the
    global min of (query pixel + cell).
    """

    dims: Dimensions
    cells: np.ndarray

    def __post_init__(self):
        cells = np.ascontiguousarray(self.cells, dtype=np.float64)
        if cells.shape != (self.dims.n_features, self.dims.horizon):
            raise ValidationError(
                f"lattice cells shape {cells.shape} != "
                f"({self.dims.n_features}, {self.dims.horizon})"
            )
        object.__setattr__(self, "cells", cells)


def _as_bits(image, dims: Dimensions) -> np.ndarray:
    bits = image.bits if isinstance(image, BinaryImage) else np.asarray(image, dtype=np.uint8)
    if bits.shape != (dims.n_features, dims.horizon):
        raise ValidationError(
            f"image shape {bits.shape} does not match ({dims.n_features}, {dims.horizon})"
        )
    return bits


def lam_train(samples: Iterable[tuple[object, float]], dims: Dimensions) -> LatticeMemory:
    """Fold (image, label) pairs with the element-wise max of label - pixel.

    Max commutes, so the result is independent of sample order.
    """
    cells = np.full((dims.n_features, dims.horizon), -np.inf, dtype=np.float64)
    n = 0
    for image, label in samples:
        bits = _as_bits(image, dims)
        np.maximum(cells, float(label) - bits.astype(np.float64), out=cells)
        n += 1
    if n == 0:
        raise ValidationError("cannot train a lattice memory on an empty trainset")
    return LatticeMemory(dims, cells)


def lam_train_traces(traces: Sequence[Trace], dims: Dimensions) -> LatticeMemory:
    return lam_train(((encode(tr, dims), float(tr.label)) for tr in traces), dims)


def lam_predict(memory: LatticeMemory, image) -> float:
    """Global min of (query pixel + memory cell)."""
    bits = _as_bits(image, memory.dims)
    return float(np.min(memory.cells + bits))


def kernel_lam_train(traces: Sequence[Trace], model: ClusterModel) -> LatticeMemory:
    """Lattice memory restricted to samples that hit a kernel of their own
    cluster (positions unique to that cluster's CI slice)."""
    ks = model_kernels(model)
    dims = model.dims
    kept = [
        tr
        for tr in traces
        if ks.per_cluster[assign_cluster(tr.label, dims.levels)]
        & {(ev.feature, ev.time) for ev in tr.events}
    ]
    if not kept:
        raise ImagoError("no training samples contain kernels of their own cluster")
    return lam_train_traces(kept, dims)


@dataclass(frozen=True)
class ConstantSweep:
    """MCAE of every fixed output level on an even grid over [0, 1]."""

    points: np.ndarray
    curve: np.ndarray
    best_lo: float
    best_hi: float
    best_value: float

    @property
    def best(self) -> float:
        """Midpoint of the argmin interval (the whole interval is optimal)."""
        return (self.best_lo + self.best_hi) / 2.0

    @property
    def step(self) -> float:
        return float(self.points[1] - self.points[0])


def constant_sweep(labels: Sequence[float], grid: int = 10000) -> ConstantSweep:
    """Evaluate MCAE(c) = mean |label - c| on `grid` even points over [0, 1].

    Returns the full curve and the argmin interval; the curve is convex and
    flat between the two middle order statistics, so the interval can span
    many grid points.
    """
    if len(labels) == 0:
        raise ValidationError("constant_sweep needs at least one label")
    if isinstance(grid, bool) or not isinstance(grid, int) or grid < 2:
        raise ValidationError(f"grid must be an integer >= 2, got {grid!r}")
    lab = np.asarray(labels, dtype=np.float64)
    points = np.linspace(0.0, 1.0, grid)
    curve = np.empty(grid, dtype=np.float64)
    chunk = max(1, min(grid, (1 << 22) // max(1, lab.shape[0])))
    for start in range(0, grid, chunk):
        block = points[start : start + chunk]
        curve[start : start + chunk] = np.abs(lab[:, None] - block[None, :]).mean(axis=0)
    vmin = float(curve.min())
    # Plateau tolerance: well above float-sum jitter, far below the smallest
    # off-plateau increment (2/n per grid step).
    at_min = np.flatnonzero(curve <= vmin + 1e-12)
    return ConstantSweep(
        points=points,
        curve=curve,
        best_lo=float(points[at_min[0]]),
        best_hi=float(points[at_min[-1]]),
        best_value=vmin,
    )


# --- persistence -------------------------------------------------------------


def save_lattice(memory: LatticeMemory, path: Path | str) -> None:
    out = bytearray()
    out.append(LAM_FORMAT_VERSION)
    out += struct.pack("<III", memory.dims.n_features, memory.dims.horizon, memory.dims.levels)
    out += memory.cells.astype("<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_lattice(path: Path | str) -> LatticeMemory:
    buf = Path(path).read_bytes()
    if len(buf) < 13:
        raise DataFormatError("lattice file too short", path=path)
    if buf[0] != LAM_FORMAT_VERSION:
        raise DataFormatError(f"unsupported lattice format version {buf[0]}", path=path)
    n_features, horizon, levels = struct.unpack_from("<III", buf, 1)
    try:
        dims = Dimensions(n_features, horizon, levels)
    except ValidationError as exc:
        raise DataFormatError(f"bad lattice header: {exc}", path=path) from None
    expected = 13 + dims.n_cells * 8
    if len(buf) != expected:
        raise DataFormatError(
            f"lattice file length {len(buf)} != expected {expected}", path=path
        )
    cells = np.frombuffer(buf, dtype="<f8", offset=13).reshape(dims.n_features, dims.horizon)
    return LatticeMemory(dims, cells.copy())
