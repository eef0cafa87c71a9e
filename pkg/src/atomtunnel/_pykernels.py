"""Pure-numpy versions of the compiled kernels (same signatures)."""
from __future__ import annotations

import numpy as np


def _slab(q2: np.ndarray, h: float):
    pos = q2 > 0
    neg = q2 < 0
    q = np.sqrt(np.abs(q2))
    x = q * h
    safe_q = np.where(q > 0, q, 1.0)
    c = np.where(pos, np.cos(x), np.where(neg, np.cosh(x), 1.0))
    s = np.where(pos, np.sin(x) / safe_q, np.where(neg, np.sinh(x) / safe_q, h))
    qs = np.where(pos, -q * np.sin(x), np.where(neg, q * np.sinh(x), 0.0))
    return c, s, qs


def transfer_matrices(V, h, E):
    V = np.asarray(V, dtype=float)
    E = np.asarray(E, dtype=float)
    a11 = np.ones_like(E)
    a12 = np.zeros_like(E)
    a21 = np.zeros_like(E)
    a22 = np.ones_like(E)
    for v in V:
        c, s, qs = _slab(2.0 * (E - v), h)
        a11, a12, a21, a22 = (c * a11 + s * a21, c * a12 + s * a22,
                              qs * a11 + c * a21, qs * a12 + c * a22)
    return a11, a12, a21, a22


def numerov_shoot(V, h, E, psi0, psi1):
    V = np.asarray(V, dtype=float)
    h2 = h * h / 12.0
    g = 2.0 * (V - E)
    pm, p0 = float(psi0), float(psi1)
    nodes = 1 if pm * p0 < 0.0 else 0
    for i in range(2, len(V)):
        pp = (2.0 * p0 * (1.0 + 5.0 * h2 * g[i - 1]) - pm * (1.0 - h2 * g[i - 2])) / (1.0 - h2 * g[i])
        if pp * p0 < 0.0 or (p0 == 0.0 and pp * pm < 0.0):
            nodes += 1
        if abs(pp) > 1e100:
            pp *= 1e-100
            p0 *= 1e-100
        pm, p0 = p0, pp
    return nodes, pm, p0
