"""Bit-packed popcount kernels with a compiled fast path.

The L1 distance between two binary images equals popcount(XOR) of their
bit-packed forms; scanning a training matrix with that kernel is the hot
loop of the nearest-neighbour and cluster detectors.  A Cython extension
(`imago.kernels._core`) provides the fast path and `_numpy` the fallback;
whichever is available is selected at import.  Set IMAGO_KERNELS=numpy or
IMAGO_KERNELS=compiled to force a backend (forcing "compiled" fails loudly
when the extension is missing).

Both backends consume the same packed layout: images flattened row-major,
padded with zero bits to a multiple of 64, viewed as uint64 words.  All
distances are exact integers, so backend choice never changes results.
"""

from __future__ import annotations

import os

import numpy as np

from imago.errors import ValidationError
from imago.kernels import _numpy as _numpy_impl

WORD_BITS = 64

_requested = os.environ.get("IMAGO_KERNELS", "").strip().lower()
if _requested not in ("", "compiled", "numpy"):
    raise ValidationError(f"IMAGO_KERNELS must be 'compiled' or 'numpy', got {_requested!r}")

_impl = None
if _requested in ("", "compiled"):
    try:
        from imago.kernels import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        _impl = None
if _impl is None:
    _impl = _numpy_impl
    BACKEND = "numpy"


def packed_words(n_bits: int) -> int:
    """Number of 64-bit words needed for n_bits."""
    return (n_bits + WORD_BITS - 1) // WORD_BITS


def pack_bits(flat_bits: np.ndarray) -> np.ndarray:
    """Pack a 1-D 0/1 array into uint64 words (zero-padded tail)."""
    flat_bits = np.ascontiguousarray(flat_bits, dtype=np.uint8)
    if flat_bits.ndim != 1:
        raise ValidationError("pack_bits expects a 1-D array")
    w = packed_words(flat_bits.shape[0])
    out = np.zeros(w * 8, dtype=np.uint8)
    packed = np.packbits(flat_bits, bitorder="little")
    out[: packed.shape[0]] = packed
    return out.view(np.uint64)


def pack_rows(rows: np.ndarray) -> np.ndarray:
    """Pack each row of a 2-D 0/1 array; returns (n_rows, words) uint64."""
    rows = np.ascontiguousarray(rows, dtype=np.uint8)
    if rows.ndim != 2:
        raise ValidationError("pack_rows expects a 2-D array")
    n, n_bits = rows.shape
    w = packed_words(n_bits)
    out = np.zeros((n, w * 8), dtype=np.uint8)
    packed = np.packbits(rows, axis=1, bitorder="little")
    out[:, : packed.shape[1]] = packed
    return np.ascontiguousarray(out.view(np.uint64))


def _as_matrix(mat: np.ndarray) -> np.ndarray:
    mat = np.ascontiguousarray(mat, dtype=np.uint64)
    if mat.ndim != 2:
        raise ValidationError("expected a 2-D packed matrix")
    return mat


def _as_vector(vec: np.ndarray, width: int) -> np.ndarray:
    vec = np.ascontiguousarray(vec, dtype=np.uint64)
    if vec.ndim != 1 or vec.shape[0] != width:
        raise ValidationError(f"packed query must be 1-D of width {width}, got shape {vec.shape}")
    return vec


def hamming_scan(mat: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Popcount(XOR) of `query` against every row of `mat`; int64 distances."""
    mat = _as_matrix(mat)
    query = _as_vector(query, mat.shape[1])
    return _impl.hamming_scan(mat, query)


def hamming_scan_batch(mat: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Distances of every query (rows of `queries`) against every row of `mat`."""
    mat = _as_matrix(mat)
    queries = _as_matrix(queries)
    if queries.shape[1] != mat.shape[1]:
        raise ValidationError("query width does not match matrix width")
    return _impl.hamming_scan_batch(mat, queries)


def popcount_rows(mat: np.ndarray) -> np.ndarray:
    """Popcount of each packed row."""
    mat = _as_matrix(mat)
    return _impl.popcount_rows(mat)
