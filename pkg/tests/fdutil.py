"""Finite-difference helpers for the kernel tests."""

import numpy as np

E = np.eye(3)


def central(f, x, h):
    """Central-difference gradient, stacked on a new leading axis per direction."""
    return np.stack([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in E])


def richardson_grad(f, x, h=1e-3):
    # O(h^2) differences at h and h/2 combined to O(h^4)
    return (4 * central(f, x, h / 2) - central(f, x, h)) / 3


def laplacian4(f, x, h):
    """Fourth-order Laplacian and first derivatives along each axis."""
    lap = 0.0
    d = []
    f0 = f(x)
    for e in E:
        fp1, fm1 = f(x + h * e), f(x - h * e)
        fp2, fm2 = f(x + 2 * h * e), f(x - 2 * h * e)
        lap = lap + (-fp2 + 16 * fp1 - 30 * f0 + 16 * fm1 - fm2) / (12 * h * h)
        d.append((-fp2 + 8 * fp1 - 8 * fm1 + fm2) / (12 * h))
    return lap, d


def off_axis_points(n, rmin, rmax, seed, min_rho=0.2):
    """Random points away from the e1 axis (where the kernels are only Lipschitz)."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        x = d * np.exp(rng.uniform(np.log(rmin), np.log(rmax)))
        if np.hypot(x[1], x[2]) > min_rho:
            out.append(x)
    return np.array(out)
