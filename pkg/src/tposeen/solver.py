"""Time-periodic Oseen and Navier-Stokes flow in the whole space.

Fields are stored per temporal Fourier mode k >= 0 on a uniform grid of
the cube [-L, L)^3; mode -k is the complex conjugate of mode k. The
linear response to the compactly supported forcing is computed as a
free-space convolution, the nonlinear correction pseudo-spectrally on the
periodic box.
"""

import struct
from dataclasses import dataclass, field
from math import comb
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import fft as sfft
from scipy import ndimage

from .periodic import gamma_H, grad_gamma_H
from .quadrature import AnalyticSource, ConvolutionResult, Envelope, GridSource, QuadratureSpec, convolve_r3, convolve_spacetime
from .special import FlowParams, sqrt_neg_mu
from .steady import gamma0, grad_gamma0, grad_phi0

_E1 = np.array([1.0, 0.0, 0.0])
DUMP_MAGIC = b"TPOSN1\n"


@dataclass(frozen=True)
class Grid:
    """Nodes -L + i h, i < n, per axis, h = 2L/n."""

    n: int = 64
    half_length: float = 8.0

    def __post_init__(self):
        if self.n < 8 or self.n % 2:
            raise ValueError(f"grid size must be even and at least 8, got {self.n}")
        if not self.half_length > 0:
            raise ValueError("box half-length must be positive")

    @property
    def spacing(self):
        return 2.0 * self.half_length / self.n

    def axis(self):
        return -self.half_length + self.spacing * np.arange(self.n)

    def nodes(self):
        a = self.axis()
        return np.stack(np.meshgrid(a, a, a, indexing="ij"), axis=-1)

    def wavenumbers(self):
        k = 2.0 * np.pi * sfft.fftfreq(self.n, self.spacing)
        return k[:, None, None], k[None, :, None], k[None, None, :]


# --- forcing ----------------------------------------------------------------------------


@dataclass
class ForcingSpec:
    """Forcing sum_k c_k e^{i omega k t} b(x - center) d_k with a radial bump b.

    b(y) = (1 - |y/rho|^2)^power on |y| < rho. ``amplitudes`` maps k to
    c_k; entries for -k are filled in as conj(c_k) and must agree with
    it when given. ``directions`` maps k >= 0 to 3-vectors (default e1).
    """

    amplitudes: dict
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0
    directions: Optional[dict] = None
    power: int = 4

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("support radius must be positive")
        if int(self.power) != self.power or self.power < 1:
            raise ValueError("bump power must be a positive integer")
        self.power = int(self.power)
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        amps = {int(k): complex(v) for k, v in self.amplitudes.items()}
        for k, v in list(amps.items()):
            if k == 0 and abs(v.imag) > 1e-14 * max(1.0, abs(v)):
                raise ValueError("the steady amplitude c_0 must be real")
            if -k in amps and abs(amps[-k] - np.conj(v)) > 1e-14 * max(1.0, abs(v)):
                raise ValueError(f"c_{-k} must equal conj(c_{k}) for a real forcing")
        full = {}
        for k, v in amps.items():
            full[abs(k)] = v if k >= 0 else np.conj(v)
        self.amplitudes = {k: v for k, v in sorted(full.items()) if v != 0}
        dirs = {} if self.directions is None else {int(k): np.asarray(v, dtype=complex).reshape(3) for k, v in self.directions.items()}
        if any(k < 0 for k in dirs):
            raise ValueError("give directions for k >= 0 only")
        if 0 in dirs and np.max(np.abs(dirs[0].imag)) > 0:
            raise ValueError("the steady direction must be real")
        self.directions = dirs
        p = self.power
        # b as a polynomial in r^2
        self._beta = np.array([comb(p, j) * (-1.0) ** j * self.radius ** (-2 * j) for j in range(p + 1)])
        j = np.arange(p + 1)
        self.moment = float(np.sum(self._beta * self.radius ** (2 * j + 3) / (2 * j + 3)))

    @classmethod
    def standard(cls, amplitude=0.05, radius=1.0):
        """Bump at the origin, f = amplitude b(x) (1 + cos t) e1."""
        return cls({0: amplitude, 1: amplitude / 2.0}, radius=radius)

    @property
    def max_mode(self):
        return max(self.amplitudes, default=0)

    @property
    def mass(self):
        """Integral of b over R^3."""
        return 4.0 * np.pi * self.moment

    def amplitude(self, k):
        c = self.amplitudes.get(abs(k), 0.0)
        return complex(np.conj(c)) if k < 0 else complex(c)

    def direction(self, k):
        d = self.directions.get(abs(k), _E1.astype(complex))
        return np.conj(d) if k < 0 else d

    def profile(self, y):
        z = np.asarray(y, dtype=float) - self.center
        u = np.sum(z * z, axis=-1) / self.radius**2
        return np.where(u < 1.0, np.clip(1.0 - u, 0.0, None) ** self.power, 0.0)

    def mode(self, k, y):
        return self.amplitude(k) * self.profile(y)[..., None] * self.direction(k)

    def at_time(self, t, y, params: FlowParams):
        out = np.zeros(np.shape(y)[:-1] + (3,))
        for k in self.amplitudes:
            m = self.mode(k, y) * np.exp(1j * params.omega * k * t)
            out += m.real if k == 0 else 2.0 * m.real
        return out

    def newton_hessian(self, y):
        """Hessian of q = N * b, N = 1/(4 pi |x|), shape (..., 3, 3)."""
        z = np.asarray(y, dtype=float) - self.center
        r2 = np.sum(z * z, axis=-1)
        r = np.sqrt(r2)
        inside = r < self.radius
        j = np.arange(self.power + 1)
        pw = np.where(inside, r2, 0.0)[..., None] ** j
        # q'/r = -M(r)/r^3 and (b + 3 q'/r)/r^2, smooth at the centre
        m_in = -np.sum(self._beta * pw / (2 * j + 3), axis=-1)
        jj = j[1:]
        g_in = np.sum(self._beta[1:] * (2 * jj / (2 * jj + 3)) * pw[..., :-1], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            m_out = -self.moment / np.where(inside, 1.0, r2 * r)
            g_out = -3.0 * self.moment / np.where(inside, 1.0, r2 * r2 * r)
        m = np.where(inside, m_in, m_out)
        g = np.where(inside, g_in, g_out)
        return m[..., None, None] * np.eye(3) - g[..., None, None] * z[..., :, None] * z[..., None, :]

    def projected_mode(self, k, y):
        """Divergence-free part of mode k: c_k (b d + Hess(N * b) d)."""
        d = self.direction(k)
        H = self.newton_hessian(y)
        return self.amplitude(k) * (self.profile(y)[..., None] * d + H @ d)

    def bump_transform(self, xi1, xi2, xi3):
        """int b(y) e^{-i xi . y} dy for the bump centred at the origin.

        xi1 may be complex; the result is a function of xi . xi and is
        evaluated on the outer grid xi1 x xi2 x xi3 with a Gauss rule in r.
        """
        xi1 = np.asarray(xi1)
        t2 = np.add.outer(np.asarray(xi2) ** 2, np.asarray(xi3) ** 2)
        uq, inv = np.unique(t2.ravel(), return_inverse=True)
        kap = np.sqrt(xi1[:, None] ** 2 + uq[None, :] + 0j)
        rg, wg = leggauss(48)
        r = 0.5 * (rg + 1.0)
        wr = 0.5 * wg * (1.0 - r * r) ** self.power * r * r
        out = np.zeros(kap.shape, dtype=complex)
        for ri, wi in zip(r, wr):
            out += wi * np.sinc(kap * self.radius * ri / np.pi)
        out *= 4.0 * np.pi * self.radius**3
        return out[:, inv].reshape(len(xi1), *t2.shape)

    def time_average(self):
        return ForcingSpec({0: self.amplitudes.get(0, 0.0)}, self.center, self.radius, self.directions, self.power)

    def without_mode(self, k):
        amps = {j: c for j, c in self.amplitudes.items() if j != abs(k)}
        return ForcingSpec(amps or {0: 0.0}, self.center, self.radius, self.directions, self.power)


# --- fields ---------------------------------------------------------------------------


@dataclass
class TimePeriodicField:
    """Velocity modes k = 0..K_max on a grid, shape (K_max + 1, n, n, n, 3).

    ``vorticity`` and ``source`` (the modes of -curl u ^ u), when present,
    have the same layout. ``linear`` holds the velocity of the linear
    problem for the same forcing.
    """

    grid: Grid
    modes: np.ndarray
    vorticity: Optional[np.ndarray] = None
    source: Optional[np.ndarray] = None
    linear: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.grid.n
        if self.modes.ndim != 5 or self.modes.shape[1:] != (n, n, n, 3):
            raise ValueError(f"modes must have shape (K+1, {n}, {n}, {n}, 3)")

    @property
    def K_max(self):
        return self.modes.shape[0] - 1

    def mode(self, k, which="velocity"):
        arr = self._array(which)
        if abs(k) > self.K_max:
            return np.zeros(arr.shape[1:], dtype=complex)
        return np.conj(arr[-k]) if k < 0 else arr[k]

    def _array(self, which):
        arr = {"velocity": self.modes, "vorticity": self.vorticity, "source": self.source, "linear": self.linear}[which]
        if arr is None:
            raise ValueError(f"field carries no {which} data")
        return arr

    def at_time(self, t, which="velocity"):
        arr = self._array(which)
        ph = np.exp(1j * self.grid_omega * np.arange(arr.shape[0]) * t)
        out = arr[0].real.copy()
        for k in range(1, arr.shape[0]):
            out += 2.0 * (ph[k] * arr[k]).real
        return out

    @property
    def grid_omega(self):
        return self.meta.get("omega", 1.0)

    def interpolate(self, x, k=0, which="velocity", order=5):
        """Spline interpolation of mode k at points x (..., 3)."""
        arr = self.mode(k, which)
        x = np.asarray(x, dtype=float)
        idx = ((x + self.grid.half_length) / self.grid.spacing).reshape(-1, 3).T
        out = np.empty((idx.shape[1], 3), dtype=complex)
        for c in range(3):
            re = ndimage.map_coordinates(arr[..., c].real, idx, order=order, mode="nearest")
            im = ndimage.map_coordinates(arr[..., c].imag, idx, order=order, mode="nearest")
            out[:, c] = re + 1j * im
        return out.reshape(x.shape)


def _zero_nyquist(F, n):
    F[n // 2] = 0.0
    F[:, n // 2] = 0.0
    F[:, :, n // 2] = 0.0
    return F


def _symbol_solve(Fhat, eta, params, grid):
    # apply (I - xi xi/|xi|^2) / (|xi|^2 - i lam xi1 + i eta) to the last axis
    k1, k2, k3 = grid.wavenumbers()
    ksq = k1 * k1 + k2 * k2 + k3 * k3
    den = ksq - 1j * params.lam * k1 + 1j * eta
    safe = np.where(ksq > 0, ksq, 1.0)
    kdot = (k1 * Fhat[..., 0] + k2 * Fhat[..., 1] + k3 * Fhat[..., 2]) / safe
    U = np.empty_like(Fhat)
    for c, kc in enumerate((k1, k2, k3)):
        U[..., c] = (Fhat[..., c] - kc * kdot) / np.where(ksq > 0, den, 1.0)
    U[0, 0, 0] = 0.0 if eta == 0 else Fhat[0, 0, 0] / (1j * eta)
    return _zero_nyquist(U, grid.n)


def spectral_curl(Uhat, grid):
    k1, k2, k3 = grid.wavenumbers()
    W = np.empty_like(Uhat)
    W[..., 0] = 1j * (k2 * Uhat[..., 2] - k3 * Uhat[..., 1])
    W[..., 1] = 1j * (k3 * Uhat[..., 0] - k1 * Uhat[..., 2])
    W[..., 2] = 1j * (k1 * Uhat[..., 1] - k2 * Uhat[..., 0])
    return W


def spectral_divergence(U, grid):
    """Divergence of nodal values computed with the lattice wavenumbers."""
    Uhat = sfft.fftn(U, axes=(0, 1, 2))
    k1, k2, k3 = grid.wavenumbers()
    return sfft.ifftn(1j * (k1 * Uhat[..., 0] + k2 * Uhat[..., 1] + k3 * Uhat[..., 2]))


def solve_mode(k, forcing_mode, params: FlowParams, grid: Grid, return_vorticity=False):
    """Periodic-box solve of i eta_k u - Laplacian u - lam d1 u + grad p = f, div u = 0.

    The xi = 0 coefficient is 0 for k = 0 and f_hat(0)/(i eta_k) otherwise;
    Nyquist planes are set to zero.
    """
    f = np.asarray(forcing_mode)
    if f.shape != (grid.n,) * 3 + (3,):
        raise ValueError("forcing mode must be given on the grid nodes")
    eta = params.mode_frequency(k)
    Fhat = sfft.fftn(f.astype(complex), axes=(0, 1, 2))
    U = _symbol_solve(Fhat, eta, params, grid)
    u = sfft.ifftn(U, axes=(0, 1, 2))
    if return_vorticity:
        return u, sfft.ifftn(spectral_curl(U, grid), axes=(0, 1, 2))
    return u


# --- free-space linear response ----------------------------------------------------------


def _truncated_kernel_ft(kmag, w, R):
    # Fourier transform of e^{iwr}/(4 pi r) restricted to the ball r < R
    out = np.empty(kmag.shape, dtype=complex)
    e = np.exp(1j * w * R)
    nz = kmag > 0
    k = kmag[nz]
    out[nz] = (k - e * (k * np.cos(k * R) - 1j * w * np.sin(k * R))) / ((k * k - w * w) * k)
    out[~nz] = (e * (1.0 - 1j * w * R) - 1.0) / (w * w)
    return out


def _interval_weights(n, order=8):
    # W[i, j]: integral over [t_i, t_{i+1}] of the degree order-1 interpolant, unit spacing
    W = np.zeros((n - 1, n))
    if n < order:
        order = n
    x = np.arange(order, dtype=float)
    V = np.vander(x, order, increasing=True)
    cache = {}
    for i in range(n - 1):
        s = min(max(i - order // 2 + 1, 0), n - order)
        o = i - s
        if o not in cache:
            # integrals of monomials over [o, o + 1]
            p = np.arange(order)
            mono = ((o + 1.0) ** (p + 1) - float(o) ** (p + 1)) / (p + 1)
            cache[o] = np.linalg.solve(V.T, mono)
        W[i, s : s + order] = cache[o]
    return W


def _wake_line_tail(z1, rperp, beta, s_max=1e7):
    """int_{z1}^inf Hess(psi)(s, rperp) ds, psi = e^{-beta(r + x1)}/r, frame (11, 1r, rr, tt)."""
    rp = np.asarray(rperp, dtype=float)

    def parts(s, rho):
        r = np.sqrt(s * s + rho * rho)
        psi = np.exp(-beta * _wake_sr(s, rho, r)) / r
        d1 = psi * (-beta * (s / r + 1.0) - s / (r * r))
        dt = psi * (-beta / r - 1.0 / (r * r))
        return psi, d1, dt

    psi, d1, dt = parts(z1, rp)
    # the tt part, (1/rho) d_rho psi, on geometric panels; beyond s_max psi ~ 1/s
    xg, wg = leggauss(10)
    edges = z1 + np.concatenate([[0.0], np.geomspace(1e-2, s_max, 60)])
    a, b = edges[:-1, None], edges[1:, None]
    s = (0.5 * (b - a) * xg + 0.5 * (a + b)).ravel()
    ws = (0.5 * (b - a) * wg).ravel()
    wtt = parts(s[None, :], rp[:, None])[2] @ ws - beta / (s_max + z1)
    w11 = -d1
    w1r = -rp * dt
    # Laplacian psi = -2 beta d1 psi off the axis point
    wrr = 2.0 * beta * psi + d1 - wtt
    return w11, w1r, wrr, wtt


def _wake_sr(s, rho, r):
    # r + s without cancellation behind the origin
    return np.where(s >= 0, r + s, rho * rho / np.maximum(r - s, 1e-300))


def _line_tail(f, z1, rperp, a, lam):
    """int_{z1}^inf e^{-i a s} Hess(q)(s, rperp) ds in the frame (11, 1r, rr, tt)."""
    M = f.moment
    if a == 0:
        r0 = np.sqrt(z1 * z1 + rperp * rperp)
        D = r0 * (r0 + z1)
        t11 = z1 / r0**3
        t1r = rperp / r0**3
        trr = -1.0 / D + (2.0 + z1 / r0) * rperp**2 / D**2
        ttt = -1.0 / D
        # the steady kernel keeps an algebraic wake downstream; subtract its
        # line integrals with the bump collapsed to its mass
        w11, w1r, wrr, wtt = _wake_line_tail(z1, rperp, lam / 2.0)
        return M * (t11 - w11), M * (t1r - w1r), M * (trr - wrr), M * (ttt - wtt)
    width = min(2.0, np.pi / (2.0 * abs(a)))
    span = 200.0
    npan = int(np.ceil(span / width))
    xg, wg = leggauss(8)
    a0 = z1 + width * np.arange(npan)
    s = (a0[:, None] + 0.5 * width * (xg + 1.0)).ravel()
    ws = np.tile(0.5 * width * wg, npan) * np.exp(-1j * a * (s - z1))
    send = z1 + width * npan

    def frame(S, RP):
        r2 = S * S + RP * RP
        r3 = r2 * np.sqrt(r2)
        r5 = r3 * r2
        return [3 * S * S / r5 - 1 / r3, 3 * S * RP / r5, 3 * RP * RP / r5 - 1 / r3, -1 / r3]

    inner = frame(s[None, :], rperp[:, None])
    last = frame(send, rperp)
    # beyond the panels: leading term of the expansion in 1/a
    rem = np.exp(-1j * a * (send - z1)) / (1j * a)
    return tuple(M * (c @ ws + e * rem) for c, e in zip(inner, last))


def _odd_fast_len(m):
    # odd lengths have no unpaired Nyquist frequency, so real data stay real
    m = m | 1
    while sfft.next_fast_len(m) != m:
        m += 2
    return m


def _freespace_mode(f: ForcingSpec, k, params: FlowParams, grid: Grid, oversample=1):
    """Velocity and vorticity of mode k of the linear response, on the grid nodes.

    h = Gamma_H * b is a free-space convolution of a compactly supported
    source with a radial kernel times exp(-lam x1/2), done with the
    Fourier transform of the kernel truncated beyond the largest distance
    needed. The projected part needs the Hessian of Psi * b, where
    (i eta - lam d1) Psi = N - Gamma_H; it is integrated along lines
    parallel to e1 from upstream. The transform is summed on a lattice
    finer than the grid by the factor oversample, which controls the
    error from the frequencies of the source above the grid Nyquist.
    """
    lam = params.lam
    beta = lam / 2.0
    eta = params.mode_frequency(k)
    w = 0.5j * lam if k == 0 else sqrt_neg_mu(eta, lam)
    n, L, h = grid.n, grid.half_length, grid.spacing
    c, rho = f.center, f.radius
    if np.any(np.abs(c) + rho > L - 2 * h):
        raise ValueError("forcing support must lie inside the box")
    n_ext = int(np.ceil(L / h))
    nt = (n + n_ext, n, n)
    lo = np.full(3, -L)
    hi = lo + h * (np.array(nt) - 1)
    D = np.maximum(hi - (c - rho), (c + rho) - lo)
    R = float(np.linalg.norm(D)) + h
    F = int(oversample)
    hv = h / F
    npad = [_odd_fast_len(int(np.ceil((D[a] + R) / hv)) + 2) for a in range(3)]
    kv = [2.0 * np.pi * sfft.fftfreq(npad[a], hv) for a in range(3)]
    kk = [kv[0][:, None, None], kv[1][None, :, None], kv[2][None, None, :]]
    kmag = np.sqrt(kk[0] ** 2 + kk[1] ** 2 + kk[2] ** 2)
    # exact transform of e^{beta (y1 - c1)} b(y - c), phases referred to the node -L
    S = f.bump_transform(kv[0] + 1j * beta, kv[1], kv[2])
    S = S * np.exp(-1j * kk[0] * (c[0] - lo[0]) - 1j * kk[1] * (c[1] - lo[1]) - 1j * kk[2] * (c[2] - lo[2]))
    GS = _truncated_kernel_ft(kmag, w, R) * S / hv**3
    del S, kmag
    blk = tuple(slice(0, (nt[a] - 1) * F + 1, F) for a in range(3))

    def back(mult):
        return sfft.ifftn(GS * mult if mult is not None else GS)[blk]

    H = back(None)
    dH = [back(1j * kk[a]) for a in range(3)]
    x1 = lo[0] + h * np.arange(nt[0])
    E = np.exp(-beta * (x1 - c[0]))[:, None, None]
    hval = E * H
    dh = [E * (dH[a] - (beta * H if a == 0 else 0.0)) for a in range(3)]
    pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
    ax_t = [lo[a] + h * np.arange(nt[a]) for a in range(3)]
    X = np.stack(np.meshgrid(*ax_t, indexing="ij"), axis=-1)
    qH = f.newton_hessian(X)
    del X
    Wint = _interval_weights(nt[0]) * h
    a_ = eta / lam
    phase = np.exp(-1j * a_ * (x1 - c[0]))[:, None, None]
    # transverse geometry for the upstream tails
    z2 = ax_t[1][:, None] - c[1]
    z3 = ax_t[2][None, :] - c[2]
    rp = np.sqrt(z2 * z2 + z3 * z3)
    uniq, inv = np.unique(np.round(rp, 12).ravel(), return_inverse=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        nvec = np.stack([np.where(rp > 0, z2 / rp, 1.0), np.where(rp > 0, z3 / rp, 0.0)], axis=-1)
    z1top = x1[-1] - c[0]
    t11, t1r, trr, ttt = (v[inv].reshape(rp.shape) for v in _line_tail(f, z1top, uniq, a_, lam))
    tail = np.zeros(rp.shape + (3, 3), dtype=complex)
    tail[..., 0, 0] = t11
    tail[..., 0, 1:] = t1r[..., None] * nvec
    tail[..., 1:, 0] = tail[..., 0, 1:]
    nn = nvec[..., :, None] * nvec[..., None, :]
    tail[..., 1:, 1:] = trr[..., None, None] * nn + ttt[..., None, None] * (np.eye(2) - nn)
    Z = np.empty((n, n, n, 3, 3), dtype=complex)
    for i, j in pairs:
        ddH = back(-kk[i] * kk[j])
        dd = ddH.copy()
        if i == 0:
            dd -= beta * dH[j]
        if j == 0:
            dd -= beta * dH[i]
        if i == 0 and j == 0:
            dd += beta * beta * H
        g = qH[..., i, j] - E * dd
        G = phase * g
        I = np.tensordot(Wint, G, axes=(1, 0))
        cum = np.zeros_like(G)
        cum[:-1] = np.cumsum(I[::-1], axis=0)[::-1]
        # the phase of the tail is referred to z1top, shift it to c[0]
        T = tail[..., i, j] * np.exp(-1j * a_ * z1top)
        val = (cum + T[None]) / (lam * phase)
        Z[..., i, j] = val[:n]
        Z[..., j, i] = val[:n]
    d = f.direction(k)
    amp = f.amplitude(k)
    u = amp * (hval[:n, ..., None] * d + Z @ d)
    grad = np.stack([g_[:n] for g_ in dh], axis=-1)
    om = amp * np.cross(grad, d)
    return u, om


def freespace_linear(f: ForcingSpec, params: FlowParams, grid: Grid, K_max=None, oversample=2):
    """Linear response mode by mode on the grid, free of periodic images."""
    K = f.max_mode if K_max is None else int(K_max)
    if f.max_mode > K:
        raise ValueError("K_max is below the forcing band")
    n = grid.n
    U = np.zeros((K + 1, n, n, n, 3), dtype=complex)
    W = np.zeros_like(U)
    for k in f.amplitudes:
        U[k], W[k] = _freespace_mode(f, k, params, grid, oversample)
    return TimePeriodicField(grid, U, W, np.zeros_like(U), U.copy(), {"omega": params.omega, "method": "freespace"})


def _check_margin(f: ForcingSpec, grid: Grid):
    ext = float(np.max(np.abs(f.center)) + f.radius)
    if ext > grid.half_length / 2.0:
        raise ValueError(f"forcing support reaches |x_i| = {ext}, the box needs a margin of L/2 = {grid.half_length / 2}")


def _spectral_linear(f, params, grid, K):
    X = grid.nodes()
    n = grid.n
    U = np.zeros((K + 1, n, n, n, 3), dtype=complex)
    W = np.zeros_like(U)
    for k in f.amplitudes:
        U[k], W[k] = solve_mode(k, f.mode(k, X), params, grid, return_vorticity=True)
    return U, W


def solve_linear(f: ForcingSpec, params: FlowParams, grid: Grid, K_max=None, method="spectral", wrap_check=True):
    """Linear time-periodic Oseen flow for the forcing f.

    method "spectral" solves each mode on the periodic box with solve_mode;
    the wrap-around error is estimated by repeating the solve on a box of
    twice the size and comparing at |x| <= L/3. method "freespace" uses
    the free-space convolution of _freespace_mode.
    """
    _check_margin(f, grid)
    K = f.max_mode if K_max is None else int(K_max)
    if f.max_mode > K:
        raise ValueError("K_max is below the forcing band")
    if method == "freespace":
        return freespace_linear(f, params, grid, K)
    if method != "spectral":
        raise ValueError(f"unknown method {method!r}")
    U, W = _spectral_linear(f, params, grid, K)
    meta = {"omega": params.omega, "method": "spectral"}
    if wrap_check:
        big = Grid(2 * grid.n, 2 * grid.half_length)
        Ub, _ = _spectral_linear(f, params, big, K)
        n = grid.n
        inner = Ub[:, n // 2 : n // 2 + n, n // 2 : n // 2 + n, n // 2 : n // 2 + n]
        mask = np.linalg.norm(grid.nodes(), axis=-1) <= grid.half_length / 3.0
        diff = np.abs(U - inner)[:, mask].max() if np.any(mask) else 0.0
        meta["wrap_estimate"] = float(diff)
        meta["wrap_scale"] = float(np.abs(inner[:, mask]).max())
    return TimePeriodicField(grid, U, W, np.zeros_like(U), U.copy(), meta)


# --- nonlinear iteration ------------------------------------------------------------------


class PicardDivergence(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


def _flip(Uhat):
    # coefficients of conj(u) at -xi
    return np.conj(np.roll(np.flip(Uhat, axis=(0, 1, 2)), 1, axis=(0, 1, 2)))


def _pad_index(n, m):
    k = sfft.fftfreq(n, 1.0 / n).astype(int)
    keep = np.abs(k) < n // 2
    return np.where(keep)[0], np.mod(k[keep], m)


class _Padder:
    """Zero-padding from an n^3 spectrum to m^3 and truncation back."""

    def __init__(self, n, m):
        self.n, self.m = n, m
        self.src, self.dst = _pad_index(n, m)
        self.scale = (m / n) ** 3

    def up(self, F):
        out = np.zeros((self.m,) * 3 + F.shape[3:], dtype=complex)
        s, d = self.src, self.dst
        out[np.ix_(d, d, d)] = F[np.ix_(s, s, s)] * self.scale
        return out

    def down(self, G):
        out = np.zeros((self.n,) * 3 + G.shape[3:], dtype=complex)
        s, d = self.src, self.dst
        out[np.ix_(s, s, s)] = G[np.ix_(d, d, d)] / self.scale
        return out


def _nonlinear_modes(lin_u, lin_w, Uhat, grid, fine, params, K, n_times):
    """Modes 0..K of A(u) = -curl u ^ u in coarse spectral form.

    u = linear part (given on the fine nodes) + the spectral correction;
    products are formed on the fine grid at n_times collocation times.
    """
    pad = _Padder(grid.n, fine.n)
    Vhat = _flip(Uhat)
    Wc = np.stack([spectral_curl(Uhat[k], grid) for k in range(K + 1)])
    Wv = _flip(Wc)
    out = np.zeros_like(Uhat)
    om = params.omega
    T = params.period
    lin_k = [k for k in range(lin_u.shape[0]) if np.any(lin_u[k])]
    for j in range(n_times):
        t = T * j / n_times
        ph = np.exp(1j * om * np.arange(K + 1) * t)
        Us = Uhat[0].copy()
        Ws = Wc[0].copy()
        for k in range(1, K + 1):
            Us += ph[k] * Uhat[k] + np.conj(ph[k]) * Vhat[k]
            Ws += ph[k] * Wc[k] + np.conj(ph[k]) * Wv[k]
        u = sfft.ifftn(pad.up(Us), axes=(0, 1, 2)).real
        w = sfft.ifftn(pad.up(Ws), axes=(0, 1, 2)).real
        for k in lin_k:
            fac = 1.0 if k == 0 else 2.0
            u += fac * (ph[k] * lin_u[k]).real
            w += fac * (ph[k] * lin_w[k]).real
        A = -np.cross(w, u)
        Ahat = pad.down(sfft.fftn(A, axes=(0, 1, 2)))
        for k in range(K + 1):
            out[k] += np.conj(ph[k]) * Ahat
    out /= n_times
    for k in range(K + 1):
        _zero_nyquist(out[k], grid.n)
    return out


def picard_solve(f: ForcingSpec, params: FlowParams, grid: Grid, K_max=8, tol=1e-10, max_iter=30, amplitude_guard=0.25, n_times=None, linear=None):
    """Fixed-point iteration u <- Gamma * (f - curl u ^ u).

    The linear part is the free-space response; the quadratic term is
    evaluated at n_times >= 4 K_max + 1 equispaced times on a grid refined
    by 3/2, and its response is solved on the periodic box. Stops when the
    relative change of the mode norm drops below tol. Returns the field and
    the list of relative changes.
    """
    amp = max((abs(c) for c in f.amplitudes.values()), default=0.0)
    if amp > amplitude_guard:
        raise ValueError(f"forcing amplitude {amp} exceeds the guard {amplitude_guard}")
    K = int(K_max)
    if f.max_mode > K:
        raise ValueError("K_max is below the forcing band")
    n_t = 4 * K + 1 if n_times is None else int(n_times)
    if n_t < 4 * K + 1:
        raise ValueError("need at least 4 K_max + 1 collocation times")
    _check_margin(f, grid)
    fine = Grid(3 * grid.n // 2, grid.half_length)
    lin = linear if linear is not None else freespace_linear(f, params, grid, K)
    lin_f = freespace_linear(f, params, fine, f.max_mode, oversample=1)
    n = grid.n
    Uhat = np.zeros((K + 1, n, n, n, 3), dtype=complex)
    history = []
    growth = 0
    converged = False
    for it in range(max_iter):
        Ahat = _nonlinear_modes(lin_f.modes, lin_f.vorticity, Uhat, grid, fine, params, K, n_t)
        new = np.stack([_symbol_solve(Ahat[k], params.mode_frequency(k), params, grid) for k in range(K + 1)])
        # Parseval for the correction; the linear part enters through its nodal norm
        dn2 = float(np.sum(np.abs(new - Uhat) ** 2)) / n**3
        nl = sfft.ifftn(new, axes=(1, 2, 3))
        tot2 = float(np.sum(np.abs(lin.modes[: K + 1] + nl) ** 2))
        rel = float(np.sqrt(dn2 / tot2)) if tot2 > 0 else 0.0
        history.append(rel)
        Uhat = new
        if len(history) > 1 and rel > history[-2]:
            growth += 1
            if growth >= 3:
                raise PicardDivergence(f"residual grew over 3 consecutive iterations at iteration {it + 1}", history)
        else:
            growth = 0
        if not np.isfinite(rel):
            raise PicardDivergence("non-finite residual", history)
        if rel < tol:
            converged = True
            break
    Ahat = _nonlinear_modes(lin_f.modes, lin_f.vorticity, Uhat, grid, fine, params, K, n_t)
    u_nl = sfft.ifftn(Uhat, axes=(1, 2, 3))
    w_nl = sfft.ifftn(np.stack([spectral_curl(Uhat[k], grid) for k in range(K + 1)]), axes=(1, 2, 3))
    Kl = lin.modes.shape[0]
    U = u_nl.copy()
    W = w_nl.copy()
    U[:Kl] += lin.modes[: K + 1]
    W[:Kl] += lin.vorticity[: K + 1]
    linear_modes = np.zeros_like(U)
    linear_modes[:Kl] = lin.modes[: K + 1]
    meta = {
        "omega": params.omega,
        "method": "picard",
        "iterations": len(history),
        "converged": converged,
        "n_times": n_t,
        "fine_grid": fine.n,
    }
    field_ = TimePeriodicField(grid, U, W, sfft.ifftn(Ahat, axes=(1, 2, 3)), linear_modes, meta)
    return field_, history


def project_parts(fld: TimePeriodicField):
    """Split into the time average (mode 0) and the purely periodic remainder."""
    steady = fld.modes[0].copy()
    perp = fld.modes.copy()
    perp[0] = 0.0

    def strip(a):
        if a is None:
            return None
        b = a.copy()
        b[0] = 0.0
        return b

    return steady, TimePeriodicField(fld.grid, perp, strip(fld.vorticity), strip(fld.source), strip(fld.linear), dict(fld.meta))


# --- far field and the F_S / H_S splitting -----------------------------------------------


@dataclass(frozen=True)
class CutoffSpec:
    """Cutoff chi_S: 1 on |y| <= 5S/4, 0 on |y| >= 7S/4, quintic smoothstep between.

    S0 bounds the support of the forcing and S >= 2 S0.
    """

    S: float
    S0: float

    def __post_init__(self):
        if not self.S0 > 0:
            raise ValueError("S0 must be positive")
        if not self.S >= 2.0 * self.S0:
            raise ValueError(f"S = {self.S} is below 2 S0 = {2.0 * self.S0}")

    @classmethod
    def for_forcing(cls, f: ForcingSpec, factor=2.0):
        S0 = float(np.linalg.norm(f.center)) + f.radius
        return cls(factor * S0, S0)

    def chi(self, y):
        r = np.linalg.norm(np.asarray(y, dtype=float), axis=-1) / self.S
        t = np.clip((r - 1.25) / 0.5, 0.0, 1.0)
        return 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t * t)


def source_envelope(params: FlowParams):
    """Decay shape declared for the quadratic term outside the box.

    The vorticity carries the wake factor e^{-s(lam y)/2}; 80% of that
    rate is declared.
    """
    return Envelope(a=1.0, b=1.5, lam=params.lam, alpha=0.4)


def _forcing_source(f: ForcingSpec, k, projected=False):
    amp = abs(f.amplitude(k))
    if projected:
        # outside the bump |Hess(N * b)| <= 2M/r^3
        return AnalyticSource(lambda y: f.projected_mode(k, y), decay=(amp * (1.0 + 16.0 * f.moment), 3.0), center=f.center)
    return AnalyticSource(lambda y: f.mode(k, y), support_radius=f.radius, center=f.center)


def helmholtz_project(values, grid: Grid):
    """(I - xi xi/|xi|^2) applied on the periodic box; the mean is kept."""
    Vhat = sfft.fftn(np.asarray(values, dtype=complex), axes=(0, 1, 2))
    k1, k2, k3 = grid.wavenumbers()
    ksq = k1 * k1 + k2 * k2 + k3 * k3
    kdot = (k1 * Vhat[..., 0] + k2 * Vhat[..., 1] + k3 * Vhat[..., 2]) / np.where(ksq > 0, ksq, 1.0)
    for c, kc in enumerate((k1, k2, k3)):
        Vhat[..., c] -= kc * kdot
    return sfft.ifftn(_zero_nyquist(Vhat, grid.n), axes=(0, 1, 2))


def _grid_source(values, fld: TimePeriodicField, params, weight=None):
    v = values if weight is None else values * weight[..., None]
    return GridSource(v, fld.grid.half_length, source_envelope(params))


def _sum_results(parts):
    parts = [p for p in parts if p is not None]
    if not parts:
        raise ValueError("nothing to evaluate")
    val = parts[0].value
    for p in parts[1:]:
        val = val + p.value
    return ConvolutionResult(val, float(sum(p.error for p in parts)), float(sum(p.tail for p in parts)))


def _steady_kernel(kind, params):
    if kind == "velocity":
        return (lambda z: gamma0(z, params)), "matvec"
    if kind == "velocity_gradient":
        return (lambda z: grad_gamma0(z, params)), "grad_matvec"
    if kind == "vorticity":
        return (lambda z: grad_phi0(z, params)), "wedge"
    raise ValueError(f"unknown quantity {kind!r}")


def _outer(K, S):
    return K[..., :, None] * S[..., None, :]


def _periodic_kernel(kind, k, params):
    eta = params.mode_frequency(k)
    if kind == "velocity":
        return (lambda z: gamma_H(z, eta, params)), "scalar"
    if kind == "velocity_gradient":
        return (lambda z: grad_gamma_H(z, eta, params)), _outer
    if kind == "vorticity":
        return (lambda z: grad_gamma_H(z, eta, params)), "wedge"
    raise ValueError(f"unknown quantity {kind!r}")


def _grid_mask(fld, cutoff, part):
    if cutoff is None or part is None:
        return None
    chi = cutoff.chi(fld.grid.nodes())
    return chi if part == "H" else 1.0 - chi


def _steady_part(kind, x, fld, f, params, spec, forcing=True, nonlinear=True, mask=None):
    kernel, contract = _steady_kernel(kind, params)
    parts = []
    if forcing and f is not None and 0 in f.amplitudes:
        parts.append(convolve_r3(kernel, _forcing_source(f, 0), x, spec, contract))
    if nonlinear and fld is not None and fld.source is not None:
        A0 = fld.mode(0, "source").real
        if mask is not None:
            A0 = A0 * mask[..., None]
        if np.any(A0):
            parts.append(convolve_r3(kernel, _grid_source(A0, fld, params), x, spec, contract))
    if not parts:
        shape = (3, 3) if kind == "velocity_gradient" else (3,)
        return ConvolutionResult(np.zeros(shape), 0.0, 0.0)
    return _sum_results(parts)


def _periodic_part(kind, x, t, fld, f, params, spec, forcing=True, nonlinear=True, mask=None):
    # only modes k >= 1 are convolved; mode -k contributes the complex conjugate
    t = np.asarray(t, dtype=float)
    K = 0 if fld is None else fld.K_max
    if f is not None:
        K = max(K, f.max_mode)
    project = kind != "vorticity"
    ana, grd, kern = {}, {}, {}
    for k in range(1, K + 1):
        kern[k] = _periodic_kernel(kind, k, params)
        if forcing and f is not None and k in f.amplitudes:
            ana[k] = _forcing_source(f, k, projected=project)
        if nonlinear and fld is not None and fld.source is not None and k <= fld.K_max:
            A = fld.mode(k, "source")
            if mask is not None:
                A = A * mask[..., None]
            if np.any(A):
                if project:
                    A = helmholtz_project(A, fld.grid)
                grd[k] = _grid_source(A, fld, params)
    parts = []
    for srcs in (ana, grd):
        if not srcs:
            continue
        kinds = {kern[k][1] for k in srcs}
        contract = kinds.pop()
        res = convolve_spacetime({k: kern[k][0] for k in srcs}, srcs, t, x, spec, contract, params)
        parts.append(ConvolutionResult(2.0 * res.value.real, 2.0 * res.error, 2.0 * res.tail))
    if not parts:
        shape = (3, 3) if kind == "velocity_gradient" else (3,)
        return ConvolutionResult(np.zeros(t.shape + shape), 0.0, 0.0)
    return _sum_results(parts)


def eval_vorticity_farfield(x, t, fld: TimePeriodicField, f: ForcingSpec, params: FlowParams, spec: QuadratureSpec = QuadratureSpec(), nonlinear=True):
    """Steady and purely periodic vorticity from the representation formulas.

    curl v = grad phi0 * ^ (f_0 + A_0) and curl w(t) = sum_{k != 0}
    e^{i omega k t} grad Gamma_H,k * ^ (f_k + A_k), with A the modes of
    -curl u ^ u stored in the field. No projection is needed since the curl
    annihilates gradients. Returns two ConvolutionResults; the second has
    the leading shape of t.
    """
    x = _check_far(x, f)
    steady = _steady_part("vorticity", x, fld, f, params, spec, nonlinear=nonlinear)
    perp = _periodic_part("vorticity", x, t, fld, f, params, spec, nonlinear=nonlinear)
    return steady, perp


def eval_velocity_farfield_steady(x, fld: TimePeriodicField, f: ForcingSpec, params: FlowParams, spec: QuadratureSpec = QuadratureSpec(), deriv=0, nonlinear=True):
    """v = Gamma0 * (f_0 + A_0), or its gradient [m, j] = d_m v_j for deriv=1."""
    x = _check_far(x, f)
    kind = "velocity" if deriv == 0 else "velocity_gradient"
    return _steady_part(kind, x, fld, f, params, spec, nonlinear=nonlinear)


def eval_velocity_farfield_periodic(x, t, fld: TimePeriodicField, f: ForcingSpec, params: FlowParams, spec: QuadratureSpec = QuadratureSpec(), deriv=0, nonlinear=True):
    """Purely periodic velocity w(t) = sum_{k != 0} e^{i omega k t} Gamma_H,k * P(f_k + A_k).

    P is the Helmholtz projection: analytic for the bump, spectral on the
    box for the quadratic term. The Oseen tensor of mode k and the scalar
    kernel Gamma_H,k acting on P g have the same Fourier symbol.
    """
    x = _check_far(x, f)
    kind = "velocity" if deriv == 0 else "velocity_gradient"
    return _periodic_part(kind, x, t, fld, f, params, spec, nonlinear=nonlinear)


def _check_far(x, f):
    x = np.asarray(x, dtype=float).reshape(3)
    if f is not None and np.linalg.norm(x - f.center) <= f.radius:
        raise ValueError("evaluation point lies in the support of the forcing")
    return x


_SPLIT_QUANTITIES = ("vorticity", "velocity_steady", "velocity_periodic")


def _split_part(which, x, t, fld, f, cutoff, params, spec, quantities, periodic_velocity):
    out = {}
    forcing = which == "H"
    mask = _grid_mask(fld, cutoff, which)
    src = f if forcing else None
    for q in quantities:
        if q not in _SPLIT_QUANTITIES:
            raise ValueError(f"unknown quantity {q!r}")
        if q == "vorticity":
            out["curl_v"] = _steady_part("vorticity", x, fld, src, params, spec, forcing, True, mask)
            out["curl_w"] = _periodic_part("vorticity", x, t, fld, src, params, spec, forcing, True, mask)
        elif q == "velocity_steady":
            out["v"] = _steady_part("velocity", x, fld, src, params, spec, forcing, True, mask)
        elif periodic_velocity == "projected":
            out["w"] = _periodic_part("velocity", x, t, fld, src, params, spec, forcing, True, mask)
    return out


def compute_Hs(fld: TimePeriodicField, f: ForcingSpec, cutoff: CutoffSpec, x, t, params: FlowParams, spec: QuadratureSpec = QuadratureSpec(), quantities=("vorticity", "velocity_steady"), periodic_velocity="skip"):
    """Part of the representation driven by f + chi_S A(u).

    Returns a dict of ConvolutionResults keyed by "curl_v", "curl_w" (time
    dependent), "v" and, when periodic_velocity="projected", "w".
    """
    x = np.asarray(x, dtype=float).reshape(3)
    return _split_part("H", x, t, fld, f, cutoff, params, spec, quantities, periodic_velocity)


def compute_Fs(fld: TimePeriodicField, cutoff: CutoffSpec, x, t, params: FlowParams, spec: QuadratureSpec = QuadratureSpec(), quantities=("vorticity", "velocity_steady"), periodic_velocity="skip"):
    """Part of the representation driven by (1 - chi_S) A(u); only defined for |x| > S."""
    x = np.asarray(x, dtype=float).reshape(3)
    if np.linalg.norm(x) <= cutoff.S:
        raise ValueError(f"F_S is evaluated at |x| > S = {cutoff.S}")
    return _split_part("F", x, t, fld, None, cutoff, params, spec, quantities, periodic_velocity)


@dataclass
class ResidualRow:
    x: np.ndarray
    quantity: str
    field: np.ndarray
    represented: np.ndarray
    residual: float
    magnitude: float
    budget: float

    def passed(self, rel=0.05, floor=1e-9):
        return self.residual <= rel * self.magnitude + floor

    def to_dict(self):
        return {
            "x": [float(v) for v in self.x],
            "quantity": self.quantity,
            "residual": float(self.residual),
            "magnitude": float(self.magnitude),
            "budget": float(self.budget),
        }


def residual_points(cutoff: CutoffSpec, n=20, rmin=1.2, rmax=3.0, seed=0):
    """Seeded points with |x|/S uniform in [rmin, rmax] and uniform directions."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = cutoff.S * rng.uniform(rmin, rmax, n)
    return r[:, None] * d


def fixed_point_residual(fld: TimePeriodicField, f: ForcingSpec, cutoff: CutoffSpec, points, params: FlowParams, t=0.0, spec: QuadratureSpec = QuadratureSpec()):
    """|X - F_S(u) - H_S| for the vorticity at time t and the steady velocity.

    X is the grid field interpolated at the points; both parts are
    evaluated by quadrature of the representation formulas.
    """
    if fld.source is None or fld.vorticity is None:
        raise ValueError("the field needs its vorticity and quadratic-term modes")
    rows = []
    for x in np.asarray(points, dtype=float).reshape(-1, 3):
        H = compute_Hs(fld, f, cutoff, x, t, params, spec)
        F = compute_Fs(fld, cutoff, x, t, params, spec)
        om = sum((1.0 if k == 0 else 2.0) * (np.exp(1j * params.omega * k * t) * fld.interpolate(x, k, "vorticity")).real for k in range(fld.K_max + 1))
        rep = H["curl_v"].value + F["curl_v"].value + H["curl_w"].value + F["curl_w"].value
        bud = sum(H[q].budget + F[q].budget for q in ("curl_v", "curl_w"))
        rows.append(ResidualRow(x, "vorticity", om, rep, float(np.linalg.norm(om - rep)), float(np.linalg.norm(om)), bud))
        v = fld.interpolate(x, 0, "velocity").real
        rep = H["v"].value + F["v"].value
        rows.append(ResidualRow(x, "velocity_steady", v, rep, float(np.linalg.norm(v - rep)), float(np.linalg.norm(v)), H["v"].budget + F["v"].budget))
    return rows


# --- binary dumps -------------------------------------------------------------------------


def dump_field(fld: TimePeriodicField, path, params: FlowParams):
    K, n = fld.K_max, fld.grid.n
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC)
        fh.write(struct.pack("<3Q", K, n, 0))
        fh.write(struct.pack("<3d", fld.grid.half_length, params.lam, params.period))
        for k in range(-K, K + 1):
            m = fld.mode(k)
            # x1 fastest: reverse the spatial axes before a C-order flatten
            arr = np.ascontiguousarray(m.transpose(2, 1, 0, 3)).astype("<c16")
            fh.write(arr.tobytes())


def load_field(path):
    with open(path, "rb") as fh:
        if fh.read(len(DUMP_MAGIC)) != DUMP_MAGIC:
            raise ValueError("not a TPOSN1 field dump")
        K, n, _ = struct.unpack("<3Q", fh.read(24))
        L, lam, period = struct.unpack("<3d", fh.read(24))
        raw = np.frombuffer(fh.read(), dtype="<c16")
    if raw.size != (2 * K + 1) * n**3 * 3:
        raise ValueError("truncated field dump")
    modes = raw.reshape(2 * K + 1, n, n, n, 3).transpose(0, 3, 2, 1, 4)
    params = FlowParams(lam, period)
    fld = TimePeriodicField(Grid(int(n), L), np.ascontiguousarray(modes[K:]), meta={"omega": params.omega})
    return fld, params
