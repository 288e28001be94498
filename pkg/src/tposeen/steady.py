"""Steady Oseen velocity tensor, steady vorticity kernel and their gradients.

All kernels accept points with a trailing axis of length 3 and broadcast
over the leading axes.
"""

from dataclasses import dataclass, field

import numpy as np

from .special import FlowParams, _as_points, ein, ein_derivatives, wake

FOUR_PI = 4.0 * np.pi
_EYE = np.eye(3)
_E1 = np.array([1.0, 0.0, 0.0])


def _nonzero(x):
    x = _as_points(x)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise ValueError("kernel evaluated at x = 0")
    return x, r


def _wake_gradient(x, r, lam):
    # grad of u = s(lam x)/2, with the first component written as s(x)/|x|
    g = lam / 2.0 * x / r[..., None]
    g[..., 0] = lam / 2.0 * wake(x) / r
    return g


def oseen_potential(x, params: FlowParams):
    """Scalar potential Phi = Ein(s(lam x)/2) / (4 pi lam)."""
    x, _ = _nonzero(x)
    lam = params.lam
    return ein(lam * wake(x) / 2.0) / (FOUR_PI * lam)


def gamma0(x, params: FlowParams):
    """Steady Oseen tensor (delta_jl Laplacian - d_j d_l) Phi, shape (..., 3, 3)."""
    x, r = _nonzero(x)
    lam = params.lam
    u = lam * wake(x) / 2.0
    a, da = ein_derivatives(u, 1)
    gu = _wake_gradient(x, r, lam)
    xx = x[..., :, None] * x[..., None, :]
    hu = lam / 2.0 * (_EYE / r[..., None, None] - xx / r[..., None, None] ** 3)
    lap = np.exp(-u) / r
    out = lap[..., None, None] * _EYE
    out = out - (da / lam)[..., None, None] * gu[..., :, None] * gu[..., None, :]
    out = out - (a / lam)[..., None, None] * hu
    return out / FOUR_PI


def grad_gamma0(x, params: FlowParams):
    """Gradient of gamma0, indexed [..., m, j, l] = d_m Gamma0_jl."""
    x, r = _nonzero(x)
    lam = params.lam
    u = lam * wake(x) / 2.0
    a, da, dda = ein_derivatives(u, 2)
    gu = _wake_gradient(x, r, lam)
    ri = 1.0 / r[..., None, None]
    xx = x[..., :, None] * x[..., None, :]
    hu = lam / 2.0 * (_EYE * ri - xx * ri**3)
    r3 = (1.0 / r**3)[..., None, None, None]
    r5 = (1.0 / r**5)[..., None, None, None]
    xm = x[..., :, None, None]
    xj = x[..., None, :, None]
    xl = x[..., None, None, :]
    d = _EYE
    # third derivatives of u, symmetric in (m, j, l)
    tu = lam / 2.0 * (
        -(d[None, :, :] * xm + d[:, None, :] * xj + d[:, :, None] * xl) * r3
        + 3.0 * xm * xj * xl * r5
    )
    gm = gu[..., :, None, None]
    gj = gu[..., None, :, None]
    gl = gu[..., None, None, :]
    e = np.exp(-u)
    dlap = -(e[..., None] * (gu / r[..., None] + x / r[..., None] ** 3))
    out = dlap[..., :, None, None] * d
    s = lambda v: v[..., None, None, None]
    out = out - s(dda / lam) * gm * gj * gl
    out = out - s(da / lam) * (hu[..., :, :, None] * gl + gj * hu[..., :, None, :] + gm * hu[..., None, :, :])
    out = out - s(a / lam) * tu
    return out / FOUR_PI


def phi0(x, params: FlowParams):
    """Steady vorticity kernel exp(-s(lam x)/2) / (4 pi |x|)."""
    x, r = _nonzero(x)
    return np.exp(-params.lam * wake(x) / 2.0) / (FOUR_PI * r)


def grad_phi0(x, params: FlowParams):
    """Gradient of phi0, shape (..., 3)."""
    x, r = _nonzero(x)
    lam = params.lam
    e = np.exp(-lam * wake(x) / 2.0)
    gu = _wake_gradient(x, r, lam)
    return -(e / FOUR_PI)[..., None] * (x / r[..., None] ** 3 + gu / r[..., None])


@dataclass
class KernelBoundReport:
    """Empirical constants sup |kernel| / bound-shape over a sample set."""

    samples: str
    shape: str
    constants: dict = field(default_factory=dict)
    n_samples: int = 0
    worst_points: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "samples": self.samples,
            "shape": self.shape,
            "constants": dict(self.constants),
            "n_samples": self.n_samples,
            "worst_points": {k: list(map(float, v)) for k, v in self.worst_points.items()},
        }


def sample_shell(n, rmin, rmax, seed=0, axis_fraction=0.25):
    """Seeded points with log-uniform radius; a fraction is packed near the wake axis."""
    rng = np.random.default_rng(seed)
    r = np.exp(rng.uniform(np.log(rmin), np.log(rmax), n))
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    m = int(axis_fraction * n)
    # points inside the paraboloid s(x) <~ 1 behind the origin
    sig = rng.uniform(0.0, 2.0, m)
    ang = rng.uniform(0, 2 * np.pi, m)
    rr = r[:m]
    rho = np.sqrt(np.maximum(2 * rr * sig - sig**2, 0.0))
    pts = r[:, None] * d
    pts[:m, 0] = sig - rr
    pts[:m, 1] = rho * np.cos(ang)
    pts[:m, 2] = rho * np.sin(ang)
    return pts


def verify_gamma0_bounds(params: FlowParams, points=None, n=10_000, rmin=0.5, rmax=100.0, seed=0, eps=1e-6):
    """Empirical constants of |D^a Gamma0| <= C [|x|(1+s(lam x))]^(-1-|a|/2), |a| = 0, 1."""
    if points is None:
        if n <= 0:
            raise ValueError("empty sample set")
        points = sample_shell(n, rmin, rmax, seed)
        desc = f"{n} seeded points, {rmin} <= |x| <= {rmax}, seed {seed}"
    else:
        points = _as_points(points).reshape(-1, 3)
        desc = f"{len(points)} supplied points"
    r = np.linalg.norm(points, axis=-1)
    points = points[r >= eps]
    if len(points) == 0:
        raise ValueError("empty sample set")
    r = np.linalg.norm(points, axis=-1)
    base = r * (1.0 + wake(params.lam * points))
    g0 = np.linalg.norm(gamma0(points, params), axis=(-2, -1))
    g1 = np.sqrt(np.sum(grad_gamma0(points, params) ** 2, axis=(-3, -2, -1)))
    ratio0 = g0 * base
    ratio1 = g1 * base**1.5
    rep = KernelBoundReport(desc, "[|x|(1+s(lam x))]^(-1-|a|/2)", n_samples=len(points))
    rep.constants = {"order0": float(ratio0.max()), "order1": float(ratio1.max())}
    rep.worst_points = {"order0": points[np.argmax(ratio0)], "order1": points[np.argmax(ratio1)]}
    return rep
