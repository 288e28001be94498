# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled loops for the series and time-sum kernels; see _kernels_py for the reference."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, ceil, M_PI

cnp.import_array()


def ein_series(z):
    """e^{-z} sum_n H_n z^n / n! for 0 <= z < 30 (all terms positive)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] zf = np.ascontiguousarray(z, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(zf)
    cdef Py_ssize_t i, n, nterms
    cdef double x, term, harmonic, total
    for i in range(zf.shape[0]):
        x = zf[i]
        nterms = <Py_ssize_t>ceil(x + 12.0 * sqrt(x) + 25.0)
        term = 1.0
        harmonic = 0.0
        total = 0.0
        for n in range(1, nterms + 1):
            term = term * x / n
            harmonic += 1.0 / n
            total += harmonic * term
        out[i] = exp(-x) * total
    return out.reshape(np.shape(z))


def heat_grad_l1(z, double lam, double period, tn, tw, mmax):
    """sum_i tw_i |T sum_{m<mmax} grad H(tn_i + m T, z) - g0(z)| per point."""
    cdef double[:, ::1] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef double[::1] t = np.ascontiguousarray(tn, dtype=np.float64)
    cdef double[::1] w = np.ascontiguousarray(tw, dtype=np.float64)
    cdef long long[::1] mm = np.ascontiguousarray(mmax, dtype=np.int64)
    cdef Py_ssize_t npts = zz.shape[0], nt = t.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(npts)
    cdef Py_ssize_t i, j, m
    cdef double z1, z2, z3, r, s, e, g1, g2, g3, a1, a2, a3, tau, y1, H, c, total
    cdef double four_pi = 4.0 * M_PI
    for i in range(npts):
        z1 = zz[i, 0]
        z2 = zz[i, 1]
        z3 = zz[i, 2]
        r = sqrt(z1 * z1 + z2 * z2 + z3 * z3)
        if z1 >= 0:
            s = r + z1
        else:
            s = (z2 * z2 + z3 * z3) / (r - z1)
        e = exp(-0.5 * lam * s) / four_pi
        g1 = -e * ((0.5 * lam * z1 / r + 0.5 * lam) / r + z1 / (r * r * r))
        g2 = -e * ((0.5 * lam * z2 / r) / r + z2 / (r * r * r))
        g3 = -e * ((0.5 * lam * z3 / r) / r + z3 / (r * r * r))
        total = 0.0
        for j in range(nt):
            a1 = 0.0
            a2 = 0.0
            a3 = 0.0
            for m in range(mm[i]):
                tau = t[j] + m * period
                y1 = z1 + lam * tau
                H = exp(-(y1 * y1 + z2 * z2 + z3 * z3) / (4.0 * tau)) / (four_pi * tau * sqrt(four_pi * tau))
                c = period * H / (2.0 * tau)
                a1 -= c * y1
                a2 -= c * z2
                a3 -= c * z3
            a1 -= g1
            a2 -= g2
            a3 -= g3
            total += w[j] * sqrt(a1 * a1 + a2 * a2 + a3 * a3)
        out[i] = total
    return out
