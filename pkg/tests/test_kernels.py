import importlib

import numpy as np
import pytest

from mperl import _kernels_py, kernels


def _edges(rng, n, R, m):
    return (rng.integers(0, n, m).astype(np.int64), rng.integers(0, n, m).astype(np.int64),
            rng.integers(0, R, m).astype(np.int64), rng.uniform(0.1, 1.0, m))


def _loop_contract(table, coef, src, dst, rel, w, n_out):
    out = np.zeros((n_out, table.shape[2]))
    for j, i, r, we in zip(src, dst, rel, w):
        for b in range(coef.shape[1]):
            out[i] += we * coef[r, b] * table[j, b]
    return out


def _loop_expand(x, coef, src, dst, rel, w, n_out):
    out = np.zeros((n_out, coef.shape[1], x.shape[1]))
    for j, i, r, we in zip(src, dst, rel, w):
        for b in range(coef.shape[1]):
            out[i, b] += we * coef[r, b] * x[j]
    return out


def _loop_coef_grad(table, g, src, dst, rel, w, n_rel):
    out = np.zeros((n_rel, table.shape[1]))
    for j, i, r, we in zip(src, dst, rel, w):
        out[r] += we * table[j] @ g[i]
    return out


BACKENDS = [_kernels_py]
try:
    BACKENDS.append(importlib.import_module("mperl._kernels"))
except ImportError:  # pragma: no cover
    pass


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.__name__)
def test_kernels_match_loops(backend):
    rng = np.random.default_rng(3)
    n, R, B, d = 9, 4, 3, 5
    src, dst, rel, w = _edges(rng, n, R, 40)
    table = rng.normal(size=(n, B, d))
    x = rng.normal(size=(n, d))
    coef = rng.normal(size=(R, B))
    g = rng.normal(size=(n, d))
    np.testing.assert_allclose(backend.contract(table, coef, src, dst, rel, w, n),
                               _loop_contract(table, coef, src, dst, rel, w, n), atol=1e-12)
    np.testing.assert_allclose(backend.expand(x, coef, src, dst, rel, w, n),
                               _loop_expand(x, coef, src, dst, rel, w, n), atol=1e-12)
    np.testing.assert_allclose(backend.coef_grad(table, g, src, dst, rel, w, R),
                               _loop_coef_grad(table, g, src, dst, rel, w, R), atol=1e-12)


def test_empty_edge_list():
    empty = np.zeros(0, dtype=np.int64)
    for backend in BACKENDS:
        out = backend.contract(np.ones((3, 2, 4)), np.ones((1, 2)), empty, empty, empty, np.zeros(0), 3)
        assert out.shape == (3, 4) and not out.any()


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")
