"""Finite-difference helpers on uniform grids."""
from __future__ import annotations

import functools

import numpy as np


def fornberg_weights(x0: float, x, m: int) -> np.ndarray:
    """Weights of the ``m``-th derivative at ``x0`` from samples at ``x`` (Fornberg 1988)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = np.zeros((n, m + 1))
    c1 = 1.0
    c4 = x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


@functools.lru_cache(maxsize=64)
def _stencils(n_points: int, order: int, size: int):
    out = []
    for k in range(n_points):
        start = min(max(k - size // 2, 0), n_points - size)
        w = fornberg_weights(float(k - start), np.arange(size, dtype=float), order)
        out.append((start, w))
    return out


def differentiate(values, h: float, order: int = 1, accuracy: int = 4) -> np.ndarray:
    """Derivative along axis 0 of uniformly sampled data.

    Uses a ``order + accuracy`` point stencil, centred where possible and
    one-sided near the ends, so the truncation error is ``O(h**accuracy)``
    at every sample.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    size = order + accuracy
    if size % 2 == 0:
        size += 1
    if n < size:
        raise ValueError(f"need at least {size} samples for this stencil, got {n}")
    out = np.empty_like(values)
    stencils = _stencils(n, order, size)
    half = size // 2
    # interior samples share one centred stencil
    _, w_mid = stencils[half]
    interior = np.zeros_like(values[half:n - half])
    for j in range(size):
        interior += w_mid[j] * values[j:n - size + 1 + j]
    out[half:n - half] = interior
    for k in list(range(half)) + list(range(n - half, n)):
        start, w = stencils[k]
        out[k] = np.tensordot(w, values[start:start + size], axes=1)
    return out / h**order
