"""Central finite-difference gradient checking helpers."""

import numpy as np

from mperl.diffcore import backward


def numeric_grad(fn, param, eps=1e-6):
    """d fn() / d param.data by central differences; fn returns a scalar Tensor."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = fn().item()
        flat[i] = old - eps
        down = fn().item()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return grad


def rel_error(analytic, numeric):
    scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-10)
    return np.linalg.norm(analytic - numeric) / scale


def check_gradients(fn, params, eps=1e-6):
    """Return the largest relative error over ``params``."""
    for p in params:
        p.grad = None
    backward(fn())
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        worst = max(worst, rel_error(analytic, numeric_grad(fn, p, eps)))
    return worst
