# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_fallback.py``.

Arithmetic follows the numpy expressions operation by operation so both
backends round identically (the extension is built with -ffp-contract=off).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor

cnp.import_array()


def adam_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps, double bc1, double bc2):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double c1 = 1.0 - beta1
    cdef double c2 = 1.0 - beta2
    cdef double mi, vi, gi, num
    if g.shape[0] != n or m.shape[0] != n or v.shape[0] != n:
        raise ValueError("adam_update: array lengths differ")
    with nogil:
        for i in range(n):
            gi = g[i]
            mi = m[i] * beta1
            mi = mi + c1 * gi
            vi = v[i] * beta2
            vi = vi + (c2 * gi) * gi
            m[i] = mi
            v[i] = vi
            num = lr * (mi / bc1)
            p[i] = p[i] - num / (sqrt(vi / bc2) + eps)


def sample_from_cdf(const double[::1] u, const double[:, ::1] cdf, const cnp.int64_t[::1] rows):
    cdef Py_ssize_t i, j, n = u.shape[0], k = cdf.shape[1]
    cdef cnp.int64_t r, c
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    with nogil:
        for i in range(n):
            r = rows[i]
            c = 0
            for j in range(k):
                if cdf[r, j] <= u[i]:
                    c += 1
            if c > k - 1:
                c = k - 1
            o[i] = c
    return out


def vote(const cnp.int64_t[:, ::1] labels, Py_ssize_t n_classes, const double[::1] u):
    cdef Py_ssize_t i, j, n = labels.shape[0], s = labels.shape[1]
    cdef cnp.int64_t best, ties, pick, seen
    counts = np.zeros((n, n_classes), dtype=np.int64)
    winners = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] c = counts
    cdef cnp.int64_t[::1] w = winners
    with nogil:
        for i in range(n):
            for j in range(s):
                c[i, labels[i, j]] += 1
            best = 0
            ties = 0
            for j in range(n_classes):
                if c[i, j] > best:
                    best = c[i, j]
                    ties = 1
                elif c[i, j] == best:
                    ties += 1
            pick = <cnp.int64_t>floor(u[i] * ties)
            if pick > ties - 1:
                pick = ties - 1
            seen = -1
            for j in range(n_classes):
                if c[i, j] == best:
                    seen += 1
                    if seen == pick:
                        w[i] = j
                        break
    return winners, counts


def confusion(true, pred, Py_ssize_t n_classes):
    cdef const cnp.int64_t[::1] t = np.ascontiguousarray(true, dtype=np.int64)
    cdef const cnp.int64_t[::1] q = np.ascontiguousarray(pred, dtype=np.int64)
    cdef Py_ssize_t i, n = t.shape[0]
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] o = out
    with nogil:
        for i in range(n):
            o[t[i], q[i]] += 1
    return out
