"""Domain types for malware behaviour traces.

A sample is a *trace*: a continuous maliciousness label in [0, 1] plus the
set of (feature, call-time) events observed while the sample ran during the
monitoring window.  Feature and time indices are 1-based throughout, the
same convention the detector matrices use.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from imago.errors import ValidationError

__all__ = [
    "MaliciousnessLevel",
    "FeatureEvent",
    "Dimensions",
    "Trace",
    "LabelStats",
    "assign_cluster",
    "bucket_for_confusion",
    "bucket_value",
    "label_stats",
]


def _check_index(name: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    if value < 1:
        raise ValidationError(f"{name} must be >= 1 (indices are 1-based), got {value}")
    return value


@dataclass(frozen=True, order=True)
class MaliciousnessLevel:
    """Continuous label in [0, 1]; 1 is most dangerous."""

    value: float

    def __post_init__(self):
        v = self.value
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValidationError(f"maliciousness level must be a real number, got {v!r}")
        v = float(v)
        if not math.isfinite(v) or v < 0.0 or v > 1.0:
            raise ValidationError(f"maliciousness level out of range [0, 1]: {v!r}")
        object.__setattr__(self, "value", v)

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True, order=True)
class FeatureEvent:
    """One observation: feature `feature` was called at second `time`."""

    feature: int
    time: int

    def __post_init__(self):
        _check_index("feature index", self.feature)
        _check_index("time index", self.time)


@dataclass(frozen=True)
class Dimensions:
    """Model geometry: feature count, monitoring horizon, cluster count.

    Fixed for the lifetime of a model; every trace and image is validated
    against it.
    """

    n_features: int
    horizon: int
    levels: int = 10

    def __post_init__(self):
        for name in ("n_features", "horizon", "levels"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")

    @property
    def n_cells(self) -> int:
        return self.n_features * self.horizon

    def contains(self, event: FeatureEvent) -> bool:
        return event.feature <= self.n_features and event.time <= self.horizon

    def flat_index(self, event: FeatureEvent) -> int:
        """Row-major cell index of an event (0-based)."""
        return (event.feature - 1) * self.horizon + (event.time - 1)


@dataclass(frozen=True)
class Trace:
    """One sample: id, label, and a deduplicated set of feature events.

    Duplicate (feature, time) pairs in the input are merged; downstream
    counts therefore count samples, not individual calls.
    """

    id: str
    label: MaliciousnessLevel
    events: frozenset[FeatureEvent] = field(default_factory=frozenset)

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError(f"trace id must be a non-empty string, got {self.id!r}")
        object.__setattr__(self, "events", frozenset(self.events))

    @classmethod
    def from_event_pairs(cls, id: str, xi: float, pairs: Iterable[tuple[int, int]]) -> "Trace":
        events = frozenset(FeatureEvent(f, t) for f, t in pairs)
        return cls(id, MaliciousnessLevel(xi), events)

    def sorted_events(self) -> list[FeatureEvent]:
        return sorted(self.events)

    def validate_against(self, dims: Dimensions) -> None:
        for ev in self.events:
            if ev.feature > dims.n_features:
                raise ValidationError(
                    f"trace {self.id!r}: feature index out of range: "
                    f"{ev.feature} > {dims.n_features}"
                )
            if ev.time > dims.horizon:
                raise ValidationError(
                    f"trace {self.id!r}: time index out of range: {ev.time} > {dims.horizon}"
                )


def assign_cluster(label: MaliciousnessLevel | float, levels: int) -> int:
    """Target cluster of a label: floor(levels * value) + 1, clamped at `levels`.

    The clamp only fires for value == 1.0, which would otherwise spill into a
    (levels+1)-th cluster; the bands are half-open below the top.
    """
    if isinstance(levels, bool) or not isinstance(levels, int) or levels < 1:
        raise ValidationError(f"levels must be a positive integer, got {levels!r}")
    value = float(label)
    return min(int(math.floor(levels * value)) + 1, levels)


def bucket_value(x: float, parts: int = 10) -> int:
    """Band index of an estimate, clamped into [1, parts].

    Unlike true labels, estimates (e.g. from the lattice memory) can fall
    outside [0, 1]; those land in the edge bands.
    """
    if isinstance(parts, bool) or not isinstance(parts, int) or parts < 1:
        raise ValidationError(f"parts must be a positive integer, got {parts!r}")
    x = float(x)
    if math.isnan(x):
        raise ValidationError("cannot bucket NaN")
    return max(1, min(int(math.floor(parts * x)) + 1, parts))


def bucket_for_confusion(level: MaliciousnessLevel | float) -> int:
    """Decile band of a label: i with (i-1)/10 <= value < i/10; 1.0 maps to 10."""
    return bucket_value(float(level), 10)


@dataclass(frozen=True)
class LabelStats:
    """Histogram + empirical CDF of the labels of a dataset."""

    bins: int
    histogram: tuple[int, ...]
    cdf: tuple[float, ...]
    _sorted_labels: tuple[float, ...]

    @property
    def count(self) -> int:
        return len(self._sorted_labels)

    def fraction_above(self, threshold: float) -> float:
        """Fraction of labels strictly greater than `threshold`."""
        n = self.count
        return (n - bisect_right(self._sorted_labels, threshold)) / n


def label_stats(traces: Sequence[Trace], bins: int) -> LabelStats:
    """Bin the labels of `traces` into `bins` equal bands over [0, 1].

    Band b covers [(b-1)/bins, b/bins) with 1.0 in the top band (same rule
    as cluster assignment); the CDF is sampled at the band upper edges, so
    its final value is exactly 1.0.
    """
    if not traces:
        raise ValidationError("label_stats needs a non-empty dataset")
    if isinstance(bins, bool) or not isinstance(bins, int) or bins < 1:
        raise ValidationError(f"bins must be a positive integer, got {bins!r}")
    hist = [0] * bins
    labels = []
    for tr in traces:
        v = float(tr.label)
        labels.append(v)
        hist[assign_cluster(v, bins) - 1] += 1
    n = len(labels)
    cdf = []
    running = 0
    for c in hist:
        running += c
        cdf.append(running / n)
    return LabelStats(bins, tuple(hist), tuple(cdf), tuple(sorted(labels)))
