# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: slab transfer matrices and Numerov shooting."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, sin, cos, sinh, cosh, fabs

cnp.import_array()


cdef inline void _slab(double q2, double h, double* c, double* s, double* qs) noexcept nogil:
    cdef double q, x
    if q2 > 0.0:
        q = sqrt(q2)
        x = q * h
        c[0] = cos(x)
        s[0] = sin(x) / q
        qs[0] = -q * sin(x)
    elif q2 < 0.0:
        q = sqrt(-q2)
        x = q * h
        c[0] = cosh(x)
        s[0] = sinh(x) / q
        qs[0] = q * sinh(x)
    else:
        c[0] = 1.0
        s[0] = h
        qs[0] = 0.0


def transfer_matrices(double[::1] V, double h, double[::1] E):
    """Product of (psi, psi') slab matrices, left to right, for each energy.

    Returns four arrays (m11, m12, m21, m22).
    """
    cdef Py_ssize_t ne = E.shape[0], ns = V.shape[0], i, j
    out = np.empty((4, ne), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double a11, a12, a21, a22, b11, b12, b21, b22, c, s, qs, e
    with nogil:
        for i in range(ne):
            e = E[i]
            a11 = 1.0; a12 = 0.0; a21 = 0.0; a22 = 1.0
            for j in range(ns):
                _slab(2.0 * (e - V[j]), h, &c, &s, &qs)
                # slab matrix [[c, s], [qs, c]] applied after the accumulated one
                b11 = c * a11 + s * a21
                b12 = c * a12 + s * a22
                b21 = qs * a11 + c * a21
                b22 = qs * a12 + c * a22
                a11 = b11; a12 = b12; a21 = b21; a22 = b22
            o[0, i] = a11; o[1, i] = a12; o[2, i] = a21; o[3, i] = a22
    return out[0], out[1], out[2], out[3]


def numerov_shoot(double[::1] V, double h, double E, double psi0, double psi1):
    """Integrate psi'' = 2 (V - E) psi across the samples of V.

    Returns (sign changes, psi[-2], psi[-1]) with the last two values
    rescaled by a common positive factor.
    """
    cdef Py_ssize_t n = V.shape[0], i
    cdef double h2 = h * h / 12.0
    cdef double gm, g0, gp, pm = psi0, p0 = psi1, pp
    cdef long nodes = 0
    with nogil:
        gm = 2.0 * (V[0] - E)
        g0 = 2.0 * (V[1] - E)
        if pm * p0 < 0.0:
            nodes += 1
        for i in range(2, n):
            gp = 2.0 * (V[i] - E)
            pp = (2.0 * p0 * (1.0 + 5.0 * h2 * g0) - pm * (1.0 - h2 * gm)) / (1.0 - h2 * gp)
            if pp * p0 < 0.0 or (p0 == 0.0 and pp * pm < 0.0):
                nodes += 1
            if fabs(pp) > 1e100:
                pp *= 1e-100
                p0 *= 1e-100
            pm = p0; p0 = pp
            gm = g0; g0 = gp
    return nodes, pm, p0
