"""NumPy reference kernels; semantics identical to the compiled core."""

from __future__ import annotations

import numpy as np


def hamming_scan(mat: np.ndarray, query: np.ndarray) -> np.ndarray:
    xored = np.bitwise_xor(mat, query[np.newaxis, :])
    return np.bitwise_count(xored).sum(axis=1, dtype=np.int64)


def hamming_scan_batch(mat: np.ndarray, queries: np.ndarray) -> np.ndarray:
    out = np.empty((queries.shape[0], mat.shape[0]), dtype=np.int64)
    for i in range(queries.shape[0]):
        out[i] = hamming_scan(mat, queries[i])
    return out


def popcount_rows(mat: np.ndarray) -> np.ndarray:
    return np.bitwise_count(mat).sum(axis=1, dtype=np.int64)
