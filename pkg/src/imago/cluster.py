"""Cluster-image detectors: build CI/PI/CW/CL from a trainset, classify by
the clustering (CA) or probabilistic (PA) rule, extract kernels.

The model aggregates training images per maliciousness band:

* CI — binary n_features x (horizon * levels): cell set iff any training
  sample of that cluster produced the event.
* PI — integer counts: how many samples of the cluster produced it.
* CW — samples per cluster; CL — label sum per cluster.  CL/CW is the
  cluster's mean label, returned as the estimate.

PI > 0 exactly where CI = 1, so CI is stored implicitly as PI > 0.  (The
test rule multiplies CI by PI/CW; the product equals PI/CW everywhere, and
we exploit that redundancy rather than keeping a second matrix.)

Space is dominated by the two levels x (n_features * horizon) aggregates
plus whatever image store the caller keeps, i.e. O(max(levels, trainset
size) * n_features * horizon) cells overall; classifying one image costs
O(levels * n_features * horizon) in the worst case (the bit-packed and
event-sparse kernels only lower the constant).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from imago import kernels as bitops
from imago._parallel import ordered_map
from imago.encoder import BinaryImage, ReductionMask, compute_reduction_mask, encode, write_pgm
from imago.errors import DataFormatError, ImagoError, ValidationError
from imago.trace import Dimensions, Trace, assign_cluster

MODEL_FORMAT_VERSION = 1

_EMPTY_DISTANCE = np.iinfo(np.int64).max


class ClusterModel:
    """Immutable aggregate of a trainset; all classification is pure."""

    def __init__(self, dims: Dimensions, pi: np.ndarray, cw: np.ndarray, cl: np.ndarray):
        self.dims = dims
        self.pi = np.ascontiguousarray(pi, dtype=np.int64)
        self.cw = np.ascontiguousarray(cw, dtype=np.int64)
        self.cl = np.ascontiguousarray(cl, dtype=np.float64)
        levels = dims.levels
        if self.pi.shape != (levels, dims.n_cells):
            raise ValidationError(
                f"PI shape {self.pi.shape} != ({levels}, {dims.n_cells})"
            )
        if self.cw.shape != (levels,) or self.cl.shape != (levels,):
            raise ValidationError("CW/CL must have one entry per cluster")
        self._validate_counts()
        ci_bits = (self.pi > 0).astype(np.uint8)
        self._ci_packed = bitops.pack_rows(ci_bits)
        self._ci_weights = bitops.popcount_rows(self._ci_packed)
        self._pi_sums = self.pi.sum(axis=1, dtype=np.int64)

    def _validate_counts(self) -> None:
        if (self.cw < 0).any():
            raise ValidationError("cluster weights must be nonnegative")
        if (self.pi < 0).any():
            raise ValidationError("PI counts must be nonnegative")
        per_slice_max = self.pi.max(axis=1, initial=0)
        if (per_slice_max > self.cw).any():
            raise ValidationError("PI count exceeds its cluster's sample count")
        if ((self.cl < 0) | (self.cl > self.cw)).any():
            raise ValidationError("CL must lie in [0, CW] (labels are in [0, 1])")

    @property
    def levels(self) -> int:
        return self.dims.levels

    def training_size(self) -> int:
        return int(self.cw.sum())

    def cluster_size(self, c: int) -> int:
        self._check_cluster(c)
        return int(self.cw[c - 1])

    def cluster_mean(self, c: int) -> float:
        self._check_cluster(c)
        if self.cw[c - 1] == 0:
            raise ImagoError(f"cluster {c} is empty; its mean label is undefined")
        return float(self.cl[c - 1] / self.cw[c - 1])

    def nonempty_clusters(self) -> list[int]:
        return [c + 1 for c in range(self.levels) if self.cw[c] > 0]

    def _check_cluster(self, c: int) -> None:
        if not 1 <= c <= self.levels:
            raise ValidationError(f"cluster index {c} not in [1, {self.levels}]")

    def ci_slices(self) -> np.ndarray:
        """CI as (levels, n_features, horizon) 0/1 array."""
        return (
            (self.pi > 0)
            .astype(np.uint8)
            .reshape(self.levels, self.dims.n_features, self.dims.horizon)
        )

    def ci_matrix(self) -> np.ndarray:
        """CI with slices side by side: n_features x (horizon * levels),
        slice c occupying columns (c-1)*horizon .. c*horizon - 1."""
        return np.ascontiguousarray(
            self.ci_slices().transpose(1, 0, 2).reshape(self.dims.n_features, -1)
        )

    def pi_slices(self) -> np.ndarray:
        return self.pi.reshape(self.levels, self.dims.n_features, self.dims.horizon)


def train(traces: Iterable[Trace], dims: Dimensions) -> ClusterModel:
    """Accumulate CI/PI/CW/CL over the trainset (one pass, order-free).

    CL uses exact (correctly rounded) summation, so models from permuted
    trainsets are bit-identical.
    """
    pi = np.zeros((dims.levels, dims.n_cells), dtype=np.int64)
    cw = np.zeros(dims.levels, dtype=np.int64)
    labels_per_cluster: list[list[float]] = [[] for _ in range(dims.levels)]
    n = 0
    for tr in traces:
        tr.validate_against(dims)
        tc = assign_cluster(tr.label, dims.levels)
        cw[tc - 1] += 1
        labels_per_cluster[tc - 1].append(float(tr.label))
        idx = [dims.flat_index(ev) for ev in tr.events]
        pi[tc - 1, idx] += 1
        n += 1
    if n == 0:
        raise ValidationError("cannot train on an empty trainset")
    cl = np.array([math.fsum(lbls) for lbls in labels_per_cluster], dtype=np.float64)
    return ClusterModel(dims, pi, cw, cl)


def _check_image(model: ClusterModel, image: BinaryImage) -> None:
    expected = (model.dims.n_features, model.dims.horizon)
    if image.shape != expected:
        raise ValidationError(f"image shape {image.shape} does not match model {expected}")


def ca_distances(model: ClusterModel, image: BinaryImage) -> np.ndarray:
    """L1 distance of the image to each cluster's CI slice (exact ints)."""
    _check_image(model, image)
    return bitops.hamming_scan(model._ci_packed, image.packed)


def classify_ca(model: ClusterModel, image: BinaryImage) -> tuple[int, float]:
    """Clustering approach: nearest CI slice by L1; ties to the smallest
    cluster index; empty clusters never win."""
    d = ca_distances(model, image).copy()
    d[model.cw == 0] = _EMPTY_DISTANCE
    i = int(np.argmin(d))
    if model.cw[i] == 0:
        raise ImagoError("all clusters are empty; cannot classify")
    return i + 1, model.cluster_mean(i + 1)


def pa_numerators(model: ClusterModel, image: BinaryImage) -> np.ndarray:
    """CW-scaled PA distances as exact integers.

    The probabilistic rule sums |Z - CI*PI/CW| over cells; multiplying by
    the cluster's CW gives sum(|Z*CW - PI|), an integer.  Split by Z:
    zero cells contribute PI, set cells |CW - PI|.
    """
    _check_image(model, image)
    ev = image.flat_events
    pi_ev = model.pi[:, ev]
    return (
        model._pi_sums
        - pi_ev.sum(axis=1, dtype=np.int64)
        + np.abs(model.cw[:, None] - pi_ev).sum(axis=1, dtype=np.int64)
    )


def classify_pa(model: ClusterModel, image: BinaryImage) -> tuple[int, float]:
    """Probabilistic approach: minimize sum |Z - CI*PI/CW| over nonempty
    clusters.  Comparisons are exact (cross-multiplied integers); ties go
    to the smallest cluster index."""
    num = pa_numerators(model, image)
    best: int | None = None
    best_num = 0
    best_cw = 1
    for j in range(model.levels):
        w = int(model.cw[j])
        if w == 0:
            continue
        nj = int(num[j])
        if best is None or nj * best_cw < best_num * w:
            best, best_num, best_cw = j, nj, w
    if best is None:
        raise ImagoError("all clusters are empty; cannot classify")
    return best + 1, model.cluster_mean(best + 1)


def classify_many(
    model: ClusterModel,
    images: Sequence[BinaryImage],
    approach: str,
    workers: int | None = None,
) -> list[tuple[int, float]]:
    """Classify a batch; output is independent of the worker count."""
    if approach == "ca":
        fn = lambda img: classify_ca(model, img)
    elif approach == "pa":
        fn = lambda img: classify_pa(model, img)
    else:
        raise ValidationError(f"unknown cluster approach {approach!r}")
    return ordered_map(fn, images, workers)


@dataclass(frozen=True)
class KernelSet:
    """Per-cluster (feature, time) positions set in exactly one CI slice."""

    per_cluster: dict[int, frozenset[tuple[int, int]]]

    def counts(self) -> dict[int, int]:
        return {c: len(s) for c, s in self.per_cluster.items()}

    def total(self) -> int:
        return sum(len(s) for s in self.per_cluster.values())


def kernels(model: ClusterModel) -> KernelSet:
    """Positions (feature, time) whose CI bit is set in exactly one slice."""
    slices = model.ci_slices()
    multiplicity = slices.sum(axis=0)
    per_cluster: dict[int, frozenset[tuple[int, int]]] = {}
    for c in range(model.levels):
        rows, cols = np.nonzero((slices[c] == 1) & (multiplicity == 1))
        per_cluster[c + 1] = frozenset(
            (int(r) + 1, int(t) + 1) for r, t in zip(rows, cols)
        )
    return KernelSet(per_cluster)


def compute_model_reduction_mask(model: ClusterModel) -> ReductionMask:
    return compute_reduction_mask(model.ci_matrix(), model.dims)


def render_clustering_image(model: ClusterModel, path: Path | str) -> None:
    """Write CI as a PGM (white = 1); byte-deterministic."""
    write_pgm(path, model.ci_matrix())


# --- persistence -------------------------------------------------------------
# Layout: version byte, then "<III" (n_features, horizon, levels), then the
# CI bitmap (slice-major row-major bits, big-endian packed), then LEB128
# varints of PI at the set positions in that same order, then CW as "<q" and
# CL as "<d" per cluster.


def _write_varint(out: bytearray, value: int) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise DataFormatError("truncated varint in model file")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7


def save_model(model: ClusterModel, path: Path | str) -> None:
    out = bytearray()
    out.append(MODEL_FORMAT_VERSION)
    out += struct.pack("<III", model.dims.n_features, model.dims.horizon, model.levels)
    ci_flat = (model.pi > 0).astype(np.uint8).ravel()
    out += np.packbits(ci_flat, bitorder="big").tobytes()
    for value in model.pi[model.pi > 0]:
        _write_varint(out, int(value))
    out += struct.pack(f"<{model.levels}q", *model.cw.tolist())
    out += struct.pack(f"<{model.levels}d", *model.cl.tolist())
    Path(path).write_bytes(bytes(out))


def load_model(path: Path | str) -> ClusterModel:
    buf = Path(path).read_bytes()
    if len(buf) < 13:
        raise DataFormatError("model file too short", path=path)
    version = buf[0]
    if version != MODEL_FORMAT_VERSION:
        raise DataFormatError(f"unsupported model format version {version}", path=path)
    n_features, horizon, levels = struct.unpack_from("<III", buf, 1)
    try:
        dims = Dimensions(n_features, horizon, levels)
    except ValidationError as exc:
        raise DataFormatError(f"bad model header: {exc}", path=path) from None
    n_bits = levels * dims.n_cells
    n_bytes = (n_bits + 7) // 8
    pos = 13
    if len(buf) < pos + n_bytes:
        raise DataFormatError("model file truncated in CI bitmap", path=path)
    bitmap = np.frombuffer(buf, dtype=np.uint8, count=n_bytes, offset=pos)
    pos += n_bytes
    ci_flat = np.unpackbits(bitmap, bitorder="big")[:n_bits]
    pi = np.zeros(n_bits, dtype=np.int64)
    set_positions = np.flatnonzero(ci_flat)
    for j in set_positions:
        value, pos = _read_varint(buf, pos)
        if value <= 0:
            raise DataFormatError("PI entry must be positive where CI is set", path=path)
        pi[j] = value
    tail = levels * 8 + levels * 8
    if len(buf) != pos + tail:
        raise DataFormatError("model file length mismatch after PI array", path=path)
    cw = np.array(struct.unpack_from(f"<{levels}q", buf, pos), dtype=np.int64)
    pos += levels * 8
    cl = np.array(struct.unpack_from(f"<{levels}d", buf, pos), dtype=np.float64)
    return ClusterModel(dims, pi.reshape(levels, dims.n_cells), cw, cl)
