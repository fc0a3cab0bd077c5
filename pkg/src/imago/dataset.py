"""Trace serialization (JSONL), train/test splitting, synthetic generation.

Canonical on-disk form is JSON-lines: line 1 is the header
``{"n_features": int, "horizon": int}`` and each following line is one
trace ``{"id": str, "xi": float, "events": [[feature, time], ...]}`` with
1-based indices.  The format is streamable at corpus scale and errors are
line-addressable.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from imago.errors import DataFormatError, ValidationError
from imago.trace import Dimensions, FeatureEvent, MaliciousnessLevel, Trace, assign_cluster

TRACE_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Provenance:
    kind: str  # "synthetic" | "file" | "memory"
    detail: str

    @classmethod
    def synthetic(cls, seed: int) -> "Provenance":
        return cls("synthetic", f"seed={seed}")

    @classmethod
    def file(cls, path: Path | str) -> "Provenance":
        return cls("file", str(path))

    @classmethod
    def memory(cls, detail: str) -> "Provenance":
        return cls("memory", detail)


@dataclass(frozen=True)
class Dataset:
    """An ordered, validated collection of traces under fixed dimensions."""

    dims: Dimensions
    traces: tuple[Trace, ...]
    provenance: Provenance

    def __post_init__(self):
        object.__setattr__(self, "traces", tuple(self.traces))
        seen: set[str] = set()
        for tr in self.traces:
            if tr.id in seen:
                raise ValidationError(f"duplicate trace id: {tr.id!r}")
            seen.add(tr.id)
            tr.validate_against(self.dims)

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self) -> Iterator[Trace]:
        return iter(self.traces)

    def labels(self) -> np.ndarray:
        return np.array([float(t.label) for t in self.traces], dtype=np.float64)


def save_traces(dataset: Dataset, path: Path | str) -> None:
    """Write the canonical JSONL form; byte-deterministic for equal inputs."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {"n_features": dataset.dims.n_features, "horizon": dataset.dims.horizon}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for tr in dataset.traces:
            record = {
                "id": tr.id,
                "xi": float(tr.label),
                "events": [[ev.feature, ev.time] for ev in tr.sorted_events()],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _parse_header(line: str, path: Path) -> Dimensions:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"invalid JSON in header: {exc}", path=path, line=1) from None
    if not isinstance(obj, dict) or set(obj) != {"n_features", "horizon"}:
        raise DataFormatError(
            'header must be exactly {"n_features": int, "horizon": int}', path=path, line=1
        )
    return obj


def load_traces(
    path: Path | str, levels: int = 10, expect_dims: Dimensions | None = None
) -> Dataset:
    """Load a JSONL trace file.

    `levels` completes the Dimensions (the file header carries only the
    image geometry); pass `expect_dims` to reject files whose header does
    not match a model's geometry.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    traces: list[Trace] = []
    dims: Dimensions | None = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if dims is None:
                header = _parse_header(line, path)
                try:
                    dims = Dimensions(header["n_features"], header["horizon"], levels)
                except ValidationError as exc:
                    raise DataFormatError(str(exc), path=path, line=1) from None
                if expect_dims is not None and (
                    dims.n_features != expect_dims.n_features
                    or dims.horizon != expect_dims.horizon
                ):
                    raise DataFormatError(
                        f"dims mismatch: file is {dims.n_features}x{dims.horizon}, "
                        f"expected {expect_dims.n_features}x{expect_dims.horizon}",
                        path=path,
                        line=1,
                    )
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"invalid JSON: {exc}", path=path, line=lineno) from None
            if not isinstance(obj, dict) or set(obj) != {"id", "xi", "events"}:
                raise DataFormatError(
                    'record must have exactly the fields "id", "xi", "events"',
                    path=path,
                    line=lineno,
                )
            if not isinstance(obj["id"], str) or not obj["id"]:
                raise DataFormatError("field 'id': must be a non-empty string", path=path, line=lineno)
            xi = obj["xi"]
            if isinstance(xi, bool) or not isinstance(xi, (int, float)):
                raise DataFormatError("field 'xi': must be a number", path=path, line=lineno)
            try:
                label = MaliciousnessLevel(float(xi))
            except ValidationError:
                raise DataFormatError(
                    f"field 'xi': label out of range [0, 1]: {xi!r}", path=path, line=lineno
                ) from None
            if not isinstance(obj["events"], list):
                raise DataFormatError("field 'events': must be a list", path=path, line=lineno)
            events = []
            for k, pair in enumerate(obj["events"]):
                if (
                    not isinstance(pair, list)
                    or len(pair) != 2
                    or any(isinstance(v, bool) or not isinstance(v, int) for v in pair)
                ):
                    raise DataFormatError(
                        f"field 'events[{k}]': must be [feature, time] integers",
                        path=path,
                        line=lineno,
                    )
                f, t = pair
                if f < 1 or f > dims.n_features:
                    raise DataFormatError(
                        f"field 'events[{k}]': feature index out of range: "
                        f"{f} not in [1, {dims.n_features}]",
                        path=path,
                        line=lineno,
                    )
                if t < 1 or t > dims.horizon:
                    raise DataFormatError(
                        f"field 'events[{k}]': time index out of range: "
                        f"{t} not in [1, {dims.horizon}]",
                        path=path,
                        line=lineno,
                    )
                events.append(FeatureEvent(f, t))
            traces.append(Trace(obj["id"], label, frozenset(events)))
    if dims is None:
        raise DataFormatError("empty file: missing header line", path=path)
    try:
        return Dataset(dims, tuple(traces), Provenance.file(path))
    except ValidationError as exc:
        raise DataFormatError(str(exc), path=path) from None


def held_out_size(n: int, test_fraction: float) -> int:
    """Held-out count: ceil(n * test_fraction), with the fraction snapped to
    the nearest simple rational so 0.2 of 107856 gives 21572, not a float
    artifact."""
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError(f"test_fraction must be in (0, 1), got {test_fraction!r}")
    frac = Fraction(test_fraction).limit_denominator(1_000_000)
    if not 0 < frac < 1:
        raise ValidationError(f"test_fraction must be in (0, 1), got {test_fraction!r}")
    return math.ceil(n * frac)


def split(
    dataset: Dataset,
    test_fraction: float,
    seed: int,
    stratify: bool = False,
) -> tuple[Dataset, Dataset]:
    """Deterministic seeded partition into (train, test).

    With `stratify`, the held-out fraction is drawn per cluster band, so
    the test share of a small cluster can round differently from the global
    count.  Both parts keep the original dataset order.
    """
    n = len(dataset)
    if n < 2:
        raise ValidationError(f"cannot split a dataset of size {n}")
    rng = random.Random(seed)
    if stratify:
        groups: dict[int, list[int]] = {}
        for i, tr in enumerate(dataset.traces):
            groups.setdefault(assign_cluster(tr.label, dataset.dims.levels), []).append(i)
        test_idx: set[int] = set()
        for c in sorted(groups):
            members = groups[c]
            rng.shuffle(members)
            take = held_out_size(len(members), test_fraction) if len(members) > 1 else 0
            test_idx.update(members[:take])
    else:
        order = list(range(n))
        rng.shuffle(order)
        test_idx = set(order[: held_out_size(n, test_fraction)])
    train = tuple(tr for i, tr in enumerate(dataset.traces) if i not in test_idx)
    test = tuple(tr for i, tr in enumerate(dataset.traces) if i in test_idx)
    tag = f"split(frac={test_fraction}, seed={seed}, stratify={stratify}) of {dataset.provenance.detail}"
    return (
        Dataset(dataset.dims, train, Provenance.memory(f"train {tag}")),
        Dataset(dataset.dims, test, Provenance.memory(f"test {tag}")),
    )


@dataclass(frozen=True)
class SynthSpec:
    """Desk-scale stand-in for the external corpus.

    Each cluster gets `signature_pixels` dedicated cells (disjoint across
    clusters); every trace of the cluster carries them all, plus each
    remaining cell switched on with `noise_flip_prob`.  Labels are uniform
    in the cluster's band, shrunk around the band centre by `label_jitter`
    (0 = centre point, 1 = whole band).
    """

    dims: Dimensions
    per_cluster_count: int
    signature_pixels: int
    noise_flip_prob: float
    label_jitter: float
    seed: int

    def __post_init__(self):
        if self.per_cluster_count < 1:
            raise ValidationError("per_cluster_count must be >= 1")
        if self.signature_pixels < 1:
            raise ValidationError("signature_pixels must be >= 1")
        if self.signature_pixels * self.dims.levels > self.dims.n_cells:
            raise ValidationError(
                f"requested disjoint signatures exceed image capacity: "
                f"{self.dims.levels} x {self.signature_pixels} > {self.dims.n_cells}"
            )
        if not 0.0 <= self.noise_flip_prob < 1.0:
            raise ValidationError("noise_flip_prob must be in [0, 1)")
        if not 0.0 <= self.label_jitter <= 1.0:
            raise ValidationError("label_jitter must be in [0, 1]")

    @classmethod
    def from_jsonable(cls, obj: dict) -> "SynthSpec":
        try:
            dims = Dimensions(
                obj["dims"]["n_features"], obj["dims"]["horizon"], obj["dims"]["levels"]
            )
            return cls(
                dims=dims,
                per_cluster_count=obj["per_cluster_count"],
                signature_pixels=obj["signature_pixels"],
                noise_flip_prob=obj["noise_flip_prob"],
                label_jitter=obj["label_jitter"],
                seed=obj["seed"],
            )
        except KeyError as exc:
            raise ValidationError(f"synthetic spec missing field {exc}") from None

    def to_jsonable(self) -> dict:
        return {
            "dims": {
                "n_features": self.dims.n_features,
                "horizon": self.dims.horizon,
                "levels": self.dims.levels,
            },
            "per_cluster_count": self.per_cluster_count,
            "signature_pixels": self.signature_pixels,
            "noise_flip_prob": self.noise_flip_prob,
            "label_jitter": self.label_jitter,
            "seed": self.seed,
        }


def _cell_to_event(cell: int, horizon: int) -> tuple[int, int]:
    return cell // horizon + 1, cell % horizon + 1


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Generate the seeded synthetic dataset described by `spec`.

    Fully deterministic: equal specs give byte-identical JSONL files.
    """
    dims = spec.dims
    levels = dims.levels
    horizon = dims.horizon
    rng = np.random.default_rng(spec.seed)

    drawn = rng.choice(dims.n_cells, size=levels * spec.signature_pixels, replace=False)
    signatures = [
        np.sort(drawn[c * spec.signature_pixels : (c + 1) * spec.signature_pixels])
        for c in range(levels)
    ]

    traces: list[Trace] = []
    band = 1.0 / levels
    for c in range(1, levels + 1):
        lo = (c - 1) * band
        hi_cap = math.nextafter(min(c * band, 1.0), 0.0)
        center = lo + band / 2.0
        half = spec.label_jitter * band / 2.0
        sig = signatures[c - 1]
        sig_set = set(int(x) for x in sig)
        for i in range(spec.per_cluster_count):
            u = rng.random()
            xi = center + (2.0 * u - 1.0) * half
            xi = min(max(xi, lo), hi_cap)
            if assign_cluster(xi, levels) != c:
                xi = center  # float-boundary guard; the centre is always in band
            if spec.noise_flip_prob > 0.0:
                flips = np.flatnonzero(rng.random(dims.n_cells) < spec.noise_flip_prob)
                cells = sig_set | {int(x) for x in flips}
            else:
                cells = sig_set
            events = frozenset(
                FeatureEvent(*_cell_to_event(cell, horizon)) for cell in cells
            )
            traces.append(Trace(f"syn{c:02d}-{i:05d}", MaliciousnessLevel(xi), events))
    return Dataset(dims, tuple(traces), Provenance.synthetic(spec.seed))
