# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled popcount kernels; public surface lives in imago.kernels."""

import numpy as np

from libc.stdint cimport int64_t, uint64_t

cdef extern from *:
    """
    #if defined(_MSC_VER)
    #include <intrin.h>
    static __inline unsigned long long imago_popcnt64(unsigned long long x) {
        return __popcnt64(x);
    }
    #else
    static inline unsigned long long imago_popcnt64(unsigned long long x) {
        return (unsigned long long) __builtin_popcountll(x);
    }
    #endif
    """
    uint64_t imago_popcnt64(uint64_t x) nogil


def hamming_scan(const uint64_t[:, ::1] mat, const uint64_t[::1] query):
    cdef Py_ssize_t n = mat.shape[0]
    cdef Py_ssize_t w = mat.shape[1]
    out = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] o = out
    cdef Py_ssize_t i, j
    cdef uint64_t acc
    with nogil:
        for i in range(n):
            acc = 0
            for j in range(w):
                acc += imago_popcnt64(mat[i, j] ^ query[j])
            o[i] = <int64_t> acc
    return out


def hamming_scan_batch(const uint64_t[:, ::1] mat, const uint64_t[:, ::1] queries):
    cdef Py_ssize_t n = mat.shape[0]
    cdef Py_ssize_t w = mat.shape[1]
    cdef Py_ssize_t m = queries.shape[0]
    out = np.empty((m, n), dtype=np.int64)
    cdef int64_t[:, ::1] o = out
    cdef Py_ssize_t q, i, j
    cdef uint64_t acc
    with nogil:
        for q in range(m):
            for i in range(n):
                acc = 0
                for j in range(w):
                    acc += imago_popcnt64(mat[i, j] ^ queries[q, j])
                o[q, i] = <int64_t> acc
    return out


def popcount_rows(const uint64_t[:, ::1] mat):
    cdef Py_ssize_t n = mat.shape[0]
    cdef Py_ssize_t w = mat.shape[1]
    out = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] o = out
    cdef Py_ssize_t i, j
    cdef uint64_t acc
    with nogil:
        for i in range(n):
            acc = 0
            for j in range(w):
                acc += imago_popcnt64(mat[i, j])
            o[i] = <int64_t> acc
    return out
