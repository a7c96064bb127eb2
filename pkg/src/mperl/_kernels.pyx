# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled edge kernels for relational basis aggregation.

Every kernel walks an edge list ``(src, dst, rel, w)`` once. ``coef`` holds the
per-relation basis coefficients with shape ``(R, B)``.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def contract(const double[:, :, ::1] table, const double[:, ::1] coef,
             const cnp.int64_t[::1] src, const cnp.int64_t[::1] dst,
             const cnp.int64_t[::1] rel, const double[::1] w, Py_ssize_t n_out):
    """out[dst, k] += w * sum_b coef[rel, b] * table[src, b, k]"""
    cdef Py_ssize_t n_edges = src.shape[0]
    cdef Py_ssize_t n_basis = table.shape[1]
    cdef Py_ssize_t dim = table.shape[2]
    out_arr = np.zeros((n_out, dim), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t e, b, k, i, j, r
    cdef double s
    with nogil:
        for e in range(n_edges):
            i = dst[e]
            j = src[e]
            r = rel[e]
            for b in range(n_basis):
                s = w[e] * coef[r, b]
                if s == 0.0:
                    continue
                for k in range(dim):
                    out[i, k] += s * table[j, b, k]
    return out_arr


def expand(const double[:, ::1] x, const double[:, ::1] coef,
           const cnp.int64_t[::1] src, const cnp.int64_t[::1] dst,
           const cnp.int64_t[::1] rel, const double[::1] w, Py_ssize_t n_out):
    """out[dst, b, k] += w * coef[rel, b] * x[src, k]"""
    cdef Py_ssize_t n_edges = src.shape[0]
    cdef Py_ssize_t n_basis = coef.shape[1]
    cdef Py_ssize_t dim = x.shape[1]
    out_arr = np.zeros((n_out, n_basis, dim), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t e, b, k, i, j, r
    cdef double s
    with nogil:
        for e in range(n_edges):
            i = dst[e]
            j = src[e]
            r = rel[e]
            for b in range(n_basis):
                s = w[e] * coef[r, b]
                if s == 0.0:
                    continue
                for k in range(dim):
                    out[i, b, k] += s * x[j, k]
    return out_arr


def coef_grad(const double[:, :, ::1] table, const double[:, ::1] g,
              const cnp.int64_t[::1] src, const cnp.int64_t[::1] dst,
              const cnp.int64_t[::1] rel, const double[::1] w, Py_ssize_t n_rel):
    """out[rel, b] += w * sum_k table[src, b, k] * g[dst, k]"""
    cdef Py_ssize_t n_edges = src.shape[0]
    cdef Py_ssize_t n_basis = table.shape[1]
    cdef Py_ssize_t dim = table.shape[2]
    out_arr = np.zeros((n_rel, n_basis), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t e, b, k, i, j, r
    cdef double s
    with nogil:
        for e in range(n_edges):
            i = dst[e]
            j = src[e]
            r = rel[e]
            for b in range(n_basis):
                s = 0.0
                for k in range(dim):
                    s += table[j, b, k] * g[i, k]
                out[r, b] += w[e] * s
    return out_arr
