"""Metric battery: MCAE, confusion matrix, triangle decomposition,
conservativeness ratio, total accuracy, one-vs-rest per-class metrics, and
the cross-approach per-class score.

Labels and estimates are bucketed into ten bands, band i covering
[(i-1)/10, i/10) with 1.0 in band 10.  In the confusion matrix rows are
true bands and columns estimated bands; mass above the diagonal means the
detector over-estimates risk (conservative), below means it
under-estimates (loose).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from imago.errors import ValidationError
from imago.trace import bucket_value

SCORED_METRICS = ("accuracy", "precision", "recall", "f1")


@dataclass(frozen=True)
class McaeResult:
    """Final mean cumulative absolute error plus the running series.

    running[k-1] is the mean of the first k absolute errors in input
    order; the final value is the correctly rounded mean, so it does not
    depend on how the pair stream was chunked.
    """

    final: float
    running: np.ndarray


def mcae(pairs: Sequence[tuple[float, float]]) -> McaeResult:
    if len(pairs) == 0:
        raise ValidationError("mcae needs at least one (true, estimated) pair")
    errors = [abs(float(xi) - float(xi_hat)) for xi, xi_hat in pairs]
    running = np.cumsum(errors) / np.arange(1, len(errors) + 1)
    return McaeResult(final=math.fsum(errors) / len(errors), running=running)


class ConfusionMatrix:
    """Square count matrix; counts[i][j] = samples with true band i+1
    estimated as band j+1."""

    def __init__(self, counts: np.ndarray, size: int = 10):
        counts = np.ascontiguousarray(counts, dtype=np.int64)
        if counts.shape != (size, size):
            raise ValidationError(f"confusion matrix must be {size}x{size}, got {counts.shape}")
        if (counts < 0).any():
            raise ValidationError("confusion matrix counts must be nonnegative")
        self.counts = counts
        self.size = size

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]], size: int = 10) -> "ConfusionMatrix":
        counts = np.zeros((size, size), dtype=np.int64)
        for xi, xi_hat in pairs:
            counts[bucket_value(xi, size) - 1, bucket_value(xi_hat, size) - 1] += 1
        return cls(counts, size)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.size == other.size and np.array_equal(self.counts, other.counts)


def confusion(pairs: Sequence[tuple[float, float]], size: int = 10) -> ConfusionMatrix:
    return ConfusionMatrix.from_pairs(pairs, size)


@dataclass(frozen=True)
class RegionDecomposition:
    """Upper triangle, lower triangle, diagonal; the three sum to the total."""

    upper: int  # estimated band above the true one (over-estimates)
    lower: int  # estimated band below the true one (under-estimates)
    diagonal: int


def regions(cm: ConfusionMatrix) -> RegionDecomposition:
    c = cm.counts
    return RegionDecomposition(
        upper=int(np.triu(c, k=1).sum()),
        lower=int(np.tril(c, k=-1).sum()),
        diagonal=int(np.trace(c)),
    )


def conservativeness(cm: ConfusionMatrix) -> float:
    """Upper over lower triangle mass; +inf when only over-estimates exist,
    and 1.0 (neutral) for a purely diagonal matrix."""
    r = regions(cm)
    if r.lower == 0:
        return 1.0 if r.upper == 0 else math.inf
    return r.upper / r.lower

def total_accuracy(cm: ConfusionMatrix) -> float:
    """Diagonal mass over all evaluated samples."""
    if cm.total == 0:
        raise ValidationError("total accuracy of an empty confusion matrix is undefined")
    return regions(cm).diagonal / cm.total


@dataclass(frozen=True)
class ClassMetrics:
    """One-vs-rest metrics of one estimated band.

    precision is None (reported as "-") when the band's column is all
    zero: the detector never outputs that band, so TP + FP = 0.  recall is
    0 by convention when the band has no true members either; f1 is None
    only when TP, FP and FN are all zero.
    """

    accuracy: float
    error_rate: float
    precision: float | None
    recall: float
    f1: float | None

    def to_jsonable(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "error_rate": self.error_rate,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }

    @classmethod
    def from_jsonable(cls, obj: Mapping) -> "ClassMetrics":
        return cls(
            accuracy=obj["accuracy"],
            error_rate=obj["error_rate"],
            precision=obj["precision"],
            recall=obj["recall"],
            f1=obj["f1"],
        )


def per_class(cm: ConfusionMatrix) -> list[ClassMetrics]:
    """Standard one-vs-rest metrics per band: TP on the diagonal, FP the
    rest of the column, FN the rest of the row, TN everything else."""
    n = cm.total
    if n == 0:
        raise ValidationError("per-class metrics of an empty confusion matrix are undefined")
    out = []
    c = cm.counts
    for i in range(cm.size):
        tp = int(c[i, i])
        fp = int(c[:, i].sum()) - tp
        fn = int(c[i, :].sum()) - tp
        tn = n - tp - fp - fn
        accuracy = (tp + tn) / n
        precision = None if tp + fp == 0 else tp / (tp + fp)
        recall = 0.0 if tp + fn == 0 else tp / (tp + fn)
        f1 = None if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
        out.append(
            ClassMetrics(
                accuracy=accuracy,
                error_rate=1.0 - accuracy,
                precision=precision,
                recall=recall,
                f1=f1,
            )
        )
    return out


def per_class_score(
    metrics_by_approach: Mapping[str, Sequence[ClassMetrics]],
) -> dict[str, dict[str, int]]:
    """Count, per approach and metric, the classes where it attains the
    best defined value; ties all score, undefined values never win."""
    if len(metrics_by_approach) < 2:
        raise ValidationError("per-class scoring needs at least two approaches")
    sizes = {len(m) for m in metrics_by_approach.values()}
    if len(sizes) != 1:
        raise ValidationError("approaches disagree on the number of classes")
    (n_classes,) = sizes
    scores = {name: {m: 0 for m in SCORED_METRICS} for name in metrics_by_approach}
    for i in range(n_classes):
        for metric in SCORED_METRICS:
            defined = {
                name: getattr(metrics[i], metric)
                for name, metrics in metrics_by_approach.items()
                if getattr(metrics[i], metric) is not None
            }
            if not defined:
                continue
            best = max(defined.values())
            for name, value in defined.items():
                if value == best:
                    scores[name][metric] += 1
    return scores


@dataclass(frozen=True)
class EvalReport:
    """Full metric battery of one approach on one test set."""

    approach: str
    n: int
    mcae: float
    running_mcae: tuple[float, ...]
    confusion: ConfusionMatrix
    regions: RegionDecomposition
    conservativeness: float
    total_accuracy: float
    per_class: tuple[ClassMetrics, ...]

    def to_jsonable(self, include_running: bool = True) -> dict:
        return {
            "approach": self.approach,
            "n": self.n,
            "mcae": self.mcae,
            "running_mcae": list(self.running_mcae) if include_running else None,
            "confusion": self.confusion.counts.tolist(),
            "regions": {
                "upper": self.regions.upper,
                "lower": self.regions.lower,
                "diagonal": self.regions.diagonal,
            },
            "conservativeness": "inf" if math.isinf(self.conservativeness) else self.conservativeness,
            "total_accuracy": self.total_accuracy,
            "per_class": [m.to_jsonable() for m in self.per_class],
        }

    @classmethod
    def from_jsonable(cls, obj: Mapping) -> "EvalReport":
        cm = ConfusionMatrix(np.array(obj["confusion"], dtype=np.int64), len(obj["confusion"]))
        cons = obj["conservativeness"]
        running = obj.get("running_mcae") or ()
        return cls(
            approach=obj["approach"],
            n=obj["n"],
            mcae=obj["mcae"],
            running_mcae=tuple(running),
            confusion=cm,
            regions=regions(cm),
            conservativeness=math.inf if cons == "inf" else float(cons),
            total_accuracy=obj["total_accuracy"],
            per_class=tuple(ClassMetrics.from_jsonable(m) for m in obj["per_class"]),
        )


def evaluate_pairs(approach: str, pairs: Sequence[tuple[float, float]]) -> EvalReport:
    """Compute every metric of the battery for one approach."""
    if len(pairs) == 0:
        raise ValidationError(f"approach {approach!r}: nothing to evaluate")
    err = mcae(pairs)
    cm = confusion(pairs)
    return EvalReport(
        approach=approach,
        n=len(pairs),
        mcae=err.final,
        running_mcae=tuple(float(x) for x in err.running),
        confusion=cm,
        regions=regions(cm),
        conservativeness=conservativeness(cm),
        total_accuracy=total_accuracy(cm),
        per_class=tuple(per_class(cm)),
    )
