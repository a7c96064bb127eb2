"""Numpy implementation of the edge kernels.

Same contracts as the compiled ``_kernels`` module; used when the extension
is not built or ``MPERL_PURE_PYTHON`` is set. Edges are processed one
relation at a time so the gathered blocks stay small.
"""

import numpy as np


def _relation_groups(rel):
    order = np.argsort(rel, kind="stable")
    sorted_rel = rel[order]
    bounds = np.flatnonzero(np.diff(sorted_rel)) + 1
    starts = np.concatenate(([0], bounds))
    stops = np.concatenate((bounds, [len(rel)]))
    for a, b in zip(starts, stops):
        if b > a:
            yield int(sorted_rel[a]), order[a:b]


def contract(table, coef, src, dst, rel, w, n_out):
    out = np.zeros((n_out, table.shape[2]), dtype=np.float64)
    for r, idx in _relation_groups(rel):
        msgs = np.tensordot(table[src[idx]], coef[r], axes=([1], [0]))
        np.add.at(out, dst[idx], msgs * w[idx, None])
    return out


def expand(x, coef, src, dst, rel, w, n_out):
    out = np.zeros((n_out, coef.shape[1], x.shape[1]), dtype=np.float64)
    for r, idx in _relation_groups(rel):
        msgs = (x[src[idx]] * w[idx, None])[:, None, :] * coef[r][None, :, None]
        np.add.at(out, dst[idx], msgs)
    return out


def coef_grad(table, g, src, dst, rel, w, n_rel):
    out = np.zeros((n_rel, table.shape[1]), dtype=np.float64)
    for r, idx in _relation_groups(rel):
        weighted = g[dst[idx]] * w[idx, None]
        out[r] = np.einsum("ebk,ek->b", table[src[idx]], weighted)
    return out
