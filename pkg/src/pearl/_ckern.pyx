# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled retrieval kernels.

Mirrors the numpy fallbacks in ``pearl.kernels`` exactly: same tie rules
(descending similarity, ascending index) and same outputs.
"""
import numpy as np


def topk_select(double[:, ::1] sims, Py_ssize_t k, bint exclude_self):
    """Per-row top-k selection over a similarity matrix.

    Rows of the result are sorted by descending similarity; equal
    similarities keep ascending pool index. ``exclude_self`` skips column j
    for row j (leave-one-out over a shared query/pool set).
    """
    cdef Py_ssize_t nq = sims.shape[0]
    cdef Py_ssize_t npool = sims.shape[1]
    idx_arr = np.empty((nq, k), dtype=np.int64)
    val_arr = np.empty((nq, k), dtype=np.float64)
    cdef long long[:, ::1] iv = idx_arr
    cdef double[:, ::1] vv = val_arr
    cdef Py_ssize_t i, j, cnt, p, q
    cdef double s
    for i in range(nq):
        cnt = 0
        for j in range(npool):
            if exclude_self and j == i:
                continue
            s = sims[i, j]
            if cnt == k:
                if s <= vv[i, k - 1]:
                    continue
                p = k - 1
            else:
                p = cnt
            while p > 0 and vv[i, p - 1] < s:
                p -= 1
            q = k - 1 if cnt == k else cnt
            while q > p:
                vv[i, q] = vv[i, q - 1]
                iv[i, q] = iv[i, q - 1]
                q -= 1
            vv[i, p] = s
            iv[i, p] = j
            if cnt < k:
                cnt += 1
    return idx_arr, val_arr


def separation_sums(double[:, ::1] x, int[:] labels):
    """Accumulate pairwise dot products over unordered pairs, split by label
    equality. Returns (intra_sum, intra_count, inter_sum, inter_count)."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t i, j, t
    cdef double dot
    cdef double intra = 0.0
    cdef double inter = 0.0
    cdef long long n_intra = 0
    cdef long long n_inter = 0
    for i in range(n):
        for j in range(i + 1, n):
            dot = 0.0
            for t in range(d):
                dot += x[i, t] * x[j, t]
            if labels[i] == labels[j]:
                intra += dot
                n_intra += 1
            else:
                inter += dot
                n_inter += 1
    return intra, n_intra, inter, n_inter
