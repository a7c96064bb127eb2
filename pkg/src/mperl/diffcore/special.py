"""Log-gamma, digamma and trigamma for positive float64 arrays.

Log-gamma uses the Lanczos approximation (g=7, 9 terms). Digamma and trigamma
shift the argument above 10 with the recurrences
psi(x) = psi(x+1) - 1/x and psi1(x) = psi1(x+1) + 1/x**2, then apply the
asymptotic series.
"""

import math

import numpy as np

from ..errors import DomainError

_LANCZOS_G = 7.0
_LANCZOS = np.array([
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
])
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_SHIFT = 10.0


def _positive(x, name):
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise DomainError(f"{name} requires strictly positive arguments")
    return x


def lgamma(x):
    """ln Gamma(x) for x > 0."""
    x = _positive(x, "lgamma")
    small = x < 0.5
    # reflection keeps the Lanczos sum in its accurate range
    z = np.where(small, 1.0 - x, x) - 1.0
    acc = np.full_like(z, _LANCZOS[0])
    for i in range(1, len(_LANCZOS)):
        acc = acc + _LANCZOS[i] / (z + i)
    t = z + _LANCZOS_G + 0.5
    big = _HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(acc)
    if np.any(small):
        xs = np.where(small, x, 0.5)
        refl = np.log(np.pi / np.abs(np.sin(np.pi * xs))) - big
        return np.where(small, refl, big)
    return big


def _shift_up(x, step):
    x = x.copy()
    acc = np.zeros_like(x)
    while True:
        low = x < _SHIFT
        if not low.any():
            return x, acc
        acc[low] += step(x[low])
        x[low] += 1.0


def digamma(x):
    """psi(x) = d/dx ln Gamma(x) for x > 0."""
    x = _positive(x, "digamma")
    x, acc = _shift_up(x, lambda v: -1.0 / v)
    inv2 = 1.0 / (x * x)
    series = inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 / 132))))
    return acc + np.log(x) - 0.5 / x - series


def trigamma(x):
    """psi_1(x) = d/dx psi(x) for x > 0."""
    x = _positive(x, "trigamma")
    x, acc = _shift_up(x, lambda v: 1.0 / (v * v))
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv + 0.5 * inv2 + inv * inv2 * (
        1.0 / 6 - inv2 * (1.0 / 30 - inv2 * (1.0 / 42 - inv2 * (1.0 / 30 - inv2 * 5.0 / 66)))
    )
    return acc + series
