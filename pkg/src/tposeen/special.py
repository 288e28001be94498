"""Wake geometry, the entire exponential integral and the drift square root."""

from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from . import _backend

EULER_GAMMA = 0.57721566490153286061
EIN_SWITCH = 30.0


@dataclass(frozen=True)
class FlowParams:
    """Drift speed and period of the time-periodic problem.

    Parameters
    ----------
    lam : float
        Drift speed, the far-field velocity is ``lam * e1``.
    period : float
        Time period T.
    """

    lam: float = 1.0
    period: float = 2.0 * np.pi

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam <= 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not np.isfinite(self.period) or self.period <= 0:
            raise ValueError(f"period must be positive, got {self.period}")

    @property
    def omega(self):
        return 2.0 * np.pi / self.period

    def mode_frequency(self, k):
        """Return eta_k = 2 pi k / T."""
        return 2.0 * np.pi * k / self.period


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ValueError(f"points must have a trailing axis of length 3, got {x.shape}")
    return x


def wake(x):
    """Wake function s(x) = |x| + x1.

    Evaluated without cancellation behind the body, where x1 < 0, through
    (x2^2 + x3^2) / (|x| - x1).
    """
    x = _as_points(x)
    # hypot keeps tiny and huge points away from under/overflow of the squares
    x1 = x[..., 0]
    rho = np.hypot(x[..., 1], x[..., 2])
    r = np.hypot(x1, rho)
    with np.errstate(invalid="ignore", divide="ignore"):
        behind = rho * (rho / (r - x1))
    s = np.where(x1 >= 0, r + x1, behind)
    return np.where(r == 0, 0.0, s)


def _ein_series(z):
    # e^{-z} sum_n H_n z^n / n!  -- all terms positive, no cancellation up to z = 30
    return _backend.kernels.ein_series(np.asarray(z, dtype=float))


def ein(z):
    """Entire exponential integral Ein(z) = int_0^z (1 - e^-t)/t dt.

    Uses a positive-term power series below z = 30 and
    gamma + ln z + E1(z) above. Absolute error is below 1e-12 on [0, 700].
    """
    z = np.asarray(z, dtype=float)
    if np.any(z < 0) or np.any(np.isnan(z)):
        raise ValueError("ein requires z >= 0")
    out = np.empty_like(z)
    small = z < EIN_SWITCH
    if np.any(small):
        out[small] = _ein_series(z[small])
    big = ~small
    if np.any(big):
        zb = z[big]
        out[big] = EULER_GAMMA + np.log(zb) + special.exp1(zb)
    return out if out.ndim else float(out)


def ein_derivatives(u, order=2):
    """Return a(u) = Ein'(u) and its derivatives up to ``order`` (at most 3).

    a(u) = (1 - e^-u)/u = int_0^1 e^{-ut} dt, so a^(m)(u) = int_0^1 (-t)^m e^{-ut} dt.
    Small arguments use the Taylor series to avoid the removable 0/0.
    """
    u = np.asarray(u, dtype=float)
    small = u < 0.5
    us = np.where(small, u, 0.0)
    ub = np.where(small, 1.0, u)
    e = np.exp(-ub)
    em1 = -np.expm1(-ub)
    closed = [
        em1 / ub,
        (e * (1 + ub) - 1) / ub**2,
        (2 - e * (2 + 2 * ub + ub**2)) / ub**3,
        (e * (6 + 6 * ub + 3 * ub**2 + ub**3) - 6) / ub**4,
    ]
    out = []
    for m in range(order + 1):
        # a^(m)(u) = sum_n (-1)^(n+m) u^n / (n! (n+m+1))
        ser = np.zeros_like(us)
        term = np.ones_like(us)
        for n in range(24):
            if n:
                term = term * us / n
            ser += (-1) ** (n + m) * term / (n + m + 1)
        out.append(np.where(small, ser, closed[m]))
    return out


def sqrt_neg_mu(eta, lam):
    """Square root of -mu, mu = (lam/2)^2 + i eta, with nonnegative imaginary part.

    Since Re mu > 0 the principal root of mu has positive real part, and
    i*sqrt(mu) is the required branch. Its imaginary part exceeds lam/2.
    """
    eta = np.asarray(eta, dtype=float)
    if np.any(eta == 0):
        raise ValueError("eta must be nonzero; the steady mode uses the steady kernels")
    if lam <= 0:
        raise ValueError("lam must be positive")
    mu = (lam / 2.0) ** 2 + 1j * eta
    w = 1j * np.sqrt(mu)
    return w if w.ndim else complex(w)


def _c4_ratio(eta, lam):
    w = sqrt_neg_mu(eta, lam)
    return (np.imag(w) - lam / 2.0) / np.sqrt(np.abs(eta))


def c4_constant(lam, eta0, npts=4001):
    """Infimum of (Im sqrt(-mu) - lam/2)/sqrt(|eta|) over |eta| in [eta0, 1e6 eta0].

    A geometric scan locates the minimizer, then a bounded scalar search in
    log eta between the neighbouring grid nodes refines it.
    """
    if lam <= 0 or eta0 <= 0:
        raise ValueError("lam and eta0 must be positive")
    logs = np.linspace(np.log(eta0), np.log(1e6 * eta0), npts)
    vals = _c4_ratio(np.exp(logs), lam)
    i = int(np.argmin(vals))
    best = float(vals[i])
    lo, hi = logs[max(i - 1, 0)], logs[min(i + 1, npts - 1)]
    if hi > lo:
        res = optimize.minimize_scalar(
            lambda t: float(_c4_ratio(np.exp(t), lam)),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-12},
        )
        best = min(best, float(res.fun))
    return best
