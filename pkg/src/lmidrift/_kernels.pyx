# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for Shapley estimation on models whose logits are a
sum of per-position contributions (mean-pooled bag of embeddings).

Signatures and results match ``lmidrift._fallback`` exactly up to
floating-point summation order.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


cdef inline double _class_prob(const double[::1] logits, Py_ssize_t cls) noexcept nogil:
    cdef Py_ssize_t k, C = logits.shape[0]
    cdef double mx = logits[0], total = 0.0
    for k in range(1, C):
        if logits[k] > mx:
            mx = logits[k]
    for k in range(C):
        total += exp(logits[k] - mx)
    return exp(logits[cls] - mx) / total


def shapley_walk_linear(const double[:, ::1] contrib, const double[::1] mask_contrib,
                        const double[::1] bias, Py_ssize_t cls, const cnp.int64_t[:, ::1] perms):
    """Marginal contributions along each permutation.

    Returns (sum, sum of squares) over permutations, per position.
    """
    cdef Py_ssize_t n = contrib.shape[0], C = contrib.shape[1], m = perms.shape[0]
    cdef Py_ssize_t s, j, k, pos
    cdef double prev, cur, delta
    out_sum = np.zeros(n, dtype=np.float64)
    out_sq = np.zeros(n, dtype=np.float64)
    logits_arr = np.empty(C, dtype=np.float64)
    base_arr = np.empty(C, dtype=np.float64)
    cdef double[::1] acc = out_sum, acc_sq = out_sq, logits = logits_arr, base = base_arr
    for k in range(C):
        base[k] = bias[k] + n * mask_contrib[k]
    with nogil:
        for s in range(m):
            for k in range(C):
                logits[k] = base[k]
            prev = _class_prob(logits, cls)
            for j in range(n):
                pos = perms[s, j]
                for k in range(C):
                    logits[k] += contrib[pos, k] - mask_contrib[k]
                cur = _class_prob(logits, cls)
                delta = cur - prev
                acc[pos] += delta
                acc_sq[pos] += delta * delta
                prev = cur
    return out_sum, out_sq


def coalition_values_linear(const double[:, ::1] contrib, const double[::1] mask_contrib,
                            const double[::1] bias, Py_ssize_t cls):
    """Class probability for every coalition; bit i of the index marks
    position i as present."""
    cdef Py_ssize_t n = contrib.shape[0], C = contrib.shape[1]
    cdef Py_ssize_t total = 1 << n, S, i, k
    values_arr = np.empty(total, dtype=np.float64)
    logits_arr = np.empty(C, dtype=np.float64)
    cdef double[::1] values = values_arr, logits = logits_arr
    with nogil:
        for S in range(total):
            for k in range(C):
                logits[k] = bias[k]
            for i in range(n):
                if (S >> i) & 1:
                    for k in range(C):
                        logits[k] += contrib[i, k]
                else:
                    for k in range(C):
                        logits[k] += mask_contrib[k]
            values[S] = _class_prob(logits, cls)
    return values_arr


def shapley_from_values(const double[::1] values, Py_ssize_t n):
    """Exact Shapley values from a table of 2**n coalition values."""
    cdef Py_ssize_t S, i, size
    cdef Py_ssize_t total = 1 << n
    weights_arr = np.empty(n, dtype=np.float64)
    scores_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] w = weights_arr, scores = scores_arr
    cdef double fact_n = 1.0
    # w[s] = s! (n - s - 1)! / n!
    for i in range(2, n + 1):
        fact_n *= i
    for size in range(n):
        w[size] = _fact(size) * _fact(n - size - 1) / fact_n
    with nogil:
        for S in range(total):
            size = _popcount(S)
            for i in range(n):
                if not ((S >> i) & 1):
                    scores[i] += w[size] * (values[S | (1 << i)] - values[S])
    return scores_arr


cdef double _fact(Py_ssize_t k):
    cdef double out = 1.0
    cdef Py_ssize_t i
    for i in range(2, k + 1):
        out *= i
    return out


cdef inline Py_ssize_t _popcount(Py_ssize_t x) noexcept nogil:
    cdef Py_ssize_t c = 0
    while x:
        x &= x - 1
        c += 1
    return c
