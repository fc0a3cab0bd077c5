"""imago: sparse binary-image malware detectors and their metric battery.

Traces (label + (feature, time) events) become n_features x horizon binary
images; detectors estimate the continuous maliciousness level of unseen
images.  Implemented detectors: clustering (CA), probabilistic (PA),
first-nearest-neighbour (FNN), lattice associative memory (LAM, plus a
kernel-filtered variant), and the fixed-level sweep; an external deep
detector plugs in through predictions CSV import.
"""

from imago.errors import DataFormatError, ImagoError, ValidationError
from imago.trace import (
    Dimensions,
    FeatureEvent,
    LabelStats,
    MaliciousnessLevel,
    Trace,
    assign_cluster,
    bucket_for_confusion,
    bucket_value,
    label_stats,
)

__version__ = "0.1.0"

SCHEMA_VERSIONS = {
    "trace_jsonl": 1,
    "model": 1,
    "lattice": 1,
    "manifest": 1,
    "report": 1,
}

__all__ = [
    "DataFormatError",
    "Dimensions",
    "FeatureEvent",
    "ImagoError",
    "LabelStats",
    "MaliciousnessLevel",
    "SCHEMA_VERSIONS",
    "Trace",
    "ValidationError",
    "assign_cluster",
    "bucket_for_confusion",
    "bucket_value",
    "label_stats",
    "__version__",
]
