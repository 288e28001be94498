"""Pure numpy versions of the compiled kernels in _kernels.pyx."""

import numpy as np


def ein_series(z):
    """e^{-z} sum_n H_n z^n / n! for 0 <= z < 30 (all terms positive)."""
    z = np.ascontiguousarray(z, dtype=float)
    zmax = float(np.max(z, initial=0.0))
    nterms = int(np.ceil(zmax + 12.0 * np.sqrt(zmax) + 25))
    term = np.ones_like(z)
    harmonic = 0.0
    total = np.zeros_like(z)
    for n in range(1, nterms + 1):
        term = term * z / n
        harmonic += 1.0 / n
        total += harmonic * term
    return np.exp(-z) * total


def heat_grad_l1(z, lam, period, tn, tw, mmax):
    """sum_i tw_i |T sum_{m<mmax} grad H(tn_i + m T, z) - g0(z)| per point.

    H is the heat kernel transported by the drift lam e1 and g0 the
    gradient of the steady vorticity kernel; z has shape (n, 3).
    """
    z = np.ascontiguousarray(z, dtype=float)
    tn = np.asarray(tn, dtype=float)
    tw = np.asarray(tw, dtype=float)
    mmax = np.asarray(mmax, dtype=np.int64)
    out = np.empty(len(z))
    for i, zi in enumerate(z):
        r = np.sqrt(zi @ zi)
        s = r + zi[0] if zi[0] >= 0 else (zi[1] ** 2 + zi[2] ** 2) / (r - zi[0])
        e = np.exp(-0.5 * lam * s) / (4.0 * np.pi)
        gu = 0.5 * lam * zi / r
        gu[0] += 0.5 * lam
        g0 = -e * (gu / r + zi / r**3)
        acc = np.zeros((len(tn), 3))
        for m in range(int(mmax[i])):
            tau = tn + m * period
            y = zi[None, :] + np.outer(lam * tau, [1.0, 0.0, 0.0])
            H = (4.0 * np.pi * tau) ** -1.5 * np.exp(-np.sum(y * y, axis=1) / (4.0 * tau))
            acc -= (period * H / (2.0 * tau))[:, None] * y
        acc -= g0
        out[i] = np.sum(tw * np.sqrt(np.sum(acc * acc, axis=1)))
    return out
