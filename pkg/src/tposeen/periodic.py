"""Time-periodic kernels.

Gamma_H is the fundamental solution of (i eta - Laplacian - lam d_1); its
temporal Fourier series over k != 0 is the purely periodic vorticity
kernel phi_perp. The per-mode velocity kernel Gamma_perp has no closed
form and is evaluated through the potential Psi = N * Gamma_H, whose
second derivatives reduce to a line integral along the drift direction.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .special import FlowParams, _as_points, c4_constant, sqrt_neg_mu

FOUR_PI = 4.0 * np.pi
_EYE = np.eye(3)


@dataclass(frozen=True)
class ConstantsRecord:
    """Decay constants used by the bounds and the weighted norms."""

    C4: float
    C5: float
    C3: float
    K: float
    S0: float = float("nan")
    S: float = float("nan")

    def to_dict(self):
        return {k: float(v) for k, v in self.__dict__.items()}


def constants(params: FlowParams, S0=float("nan"), S=float("nan")):
    """C4 from the smallest nonzero mode, C5 = sqrt(pi/T) C4 / 2, C3 := C5, K = min(lam, C3)/4."""
    c4 = c4_constant(params.lam, params.omega)
    c5 = np.sqrt(np.pi / params.period) * c4 / 2.0
    c3 = c5
    return ConstantsRecord(c4, c5, c3, min(params.lam, c3) / 4.0, S0, S)


@dataclass
class TruncationCertificate:
    K_used: int
    tail_bound: np.ndarray
    basis: str

    def to_dict(self):
        return {"K_used": int(self.K_used), "tail_bound": np.asarray(self.tail_bound).tolist(), "basis": self.basis}


def _nonzero(x):
    x = _as_points(x)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise ValueError("kernel evaluated at x = 0")
    return x, r


def helmholtz_derivs(x, w, b, order=1):
    """Derivatives of G = exp(i w |x| - b x1) / (4 pi |x|) up to ``order`` (<= 3).

    Returns [G, grad, hess, third] truncated to ``order``; derivative axes are
    trailing. ``w`` broadcasts against the leading shape of ``x``. With
    w = b = 0 this is the Newton kernel.
    """
    x, r = _nonzero(x)
    iw = 1j * np.asarray(w)
    ri = 1.0 / r
    G = np.exp(iw * r - b * x[..., 0]) * ri / FOUR_PI
    out = [G]
    if order < 1:
        return out
    g = iw[..., None] * x * ri[..., None] - x * (ri**2)[..., None]
    g[..., 0] -= b
    out.append(G[..., None] * g)
    if order < 2:
        return out
    xx = x[..., :, None] * x[..., None, :]
    r2 = r[..., None, None]
    dg = iw[..., None, None] * (_EYE / r2 - xx / r2**3) - (_EYE / r2**2 - 2.0 * xx / r2**4)
    hs = g[..., :, None] * g[..., None, :] + dg
    out.append(G[..., None, None] * hs)
    if order < 3:
        return out
    xm = x[..., :, None, None]
    xj = x[..., None, :, None]
    xl = x[..., None, None, :]
    r3 = r[..., None, None, None]
    sym = _EYE[None, :, :] * xm + _EYE[:, None, :] * xj + _EYE[:, :, None] * xl
    ddg = iw[..., None, None, None] * (-sym / r3**3 + 3.0 * xm * xj * xl / r3**5) - (
        -2.0 * sym / r3**4 + 8.0 * xm * xj * xl / r3**6
    )
    gm = g[..., :, None, None]
    gj = g[..., None, :, None]
    gl = g[..., None, None, :]
    third = gm * hs[..., None, :, :] + dg[..., :, :, None] * gl + gj * dg[..., :, None, :] + ddg
    out.append(G[..., None, None, None] * third)
    return out


def gamma_H(x, eta, params: FlowParams):
    """Helmholtz-with-drift kernel exp(i sqrt(-mu)|x| - lam x1/2) / (4 pi |x|)."""
    w = sqrt_neg_mu(eta, params.lam)
    return helmholtz_derivs(x, w, params.lam / 2.0, 0)[0]


def grad_gamma_H(x, eta, params: FlowParams):
    """Analytic gradient of gamma_H, shape (..., 3)."""
    w = sqrt_neg_mu(eta, params.lam)
    return helmholtz_derivs(x, w, params.lam / 2.0, 1)[1]


def hess_gamma_H(x, eta, params: FlowParams):
    w = sqrt_neg_mu(eta, params.lam)
    return helmholtz_derivs(x, w, params.lam / 2.0, 2)[2]


# --- purely periodic vorticity kernel -------------------------------------------------


def _tail_integrals(c, K):
    # int_K^inf e^{-c sqrt k} dk and int_K^inf sqrt(k) e^{-c sqrt k} dk
    S = np.sqrt(K)
    e = np.exp(-c * S)
    i0 = 2.0 * e * (S / c + 1.0 / c**2)
    i1 = 2.0 * e * (S**2 / c + 2.0 * S / c**2 + 2.0 / c**3)
    return i0, i1


def perp_tail_bound(r, K, params: FlowParams, C4=None, deriv=0):
    """Certified bound on sum_{|k|>K} |D^a Gamma_H^(k)(x)| at |x| = r.

    Uses |Gamma_H^(k)| <= exp(-C4 sqrt(eta_k) r)/(4 pi r) and, for gradients,
    |grad Gamma_H| <= (lam + 1/r + sqrt(eta_k)) |Gamma_H|; the sum over k > K is
    bounded by the integral from K because the summands decrease there.
    """
    if C4 is None:
        C4 = c4_constant(params.lam, params.omega)
    r = np.asarray(r, dtype=float)
    c = C4 * np.sqrt(params.omega) * r
    i0, i1 = _tail_integrals(c, float(K))
    if deriv == 0:
        tail = i0
    else:
        A = params.lam + 1.0 / r
        B = np.sqrt(params.omega)
        tail = A * i0 + B * i1
    return 2.0 * tail / (FOUR_PI * r)


def _gradient_summand_decreasing(r, K, params, C4):
    # (A + B sqrt k) e^{-c sqrt k} decreases for k >= K iff c (A + B sqrt K) >= B
    c = C4 * np.sqrt(params.omega) * r
    A = params.lam + 1.0 / r
    B = np.sqrt(params.omega)
    return c * (A + B * np.sqrt(K)) >= B


def choose_modes(r, tol, params: FlowParams, deriv=0, K_hard=200_000, C4=None):
    """Smallest K whose certified tail at radius ``r`` is below ``tol``."""
    if C4 is None:
        C4 = c4_constant(params.lam, params.omega)
    r = float(np.min(r))

    def ok(K):
        if deriv and not _gradient_summand_decreasing(r, K, params, C4):
            return False
        return perp_tail_bound(r, K, params, C4, deriv) <= tol

    K = 1
    while not ok(K):
        K *= 2
        if K > K_hard:
            raise RuntimeError(f"truncation failure: tail bound above {tol} at K_hard={K_hard}, |x|={r}")
    lo, hi = K // 2, K
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return max(hi, 1)


def _mode_values(x, ks, params, deriv):
    # Gamma_H^{(k)} (or its gradient) for the listed k, stacked on axis 0
    eta = params.mode_frequency(np.asarray(ks, dtype=float))
    w = sqrt_neg_mu(eta, params.lam).reshape((-1,) + (1,) * (x.ndim - 1))
    return helmholtz_derivs(x[None], w, params.lam / 2.0, deriv)[deriv]


def _perp_series(t, x, params, K, deriv, chunk=256):
    x, _ = _nonzero(x)
    t = np.asarray(t, dtype=float)
    # times broadcast against the point shape
    shape = np.broadcast_shapes(t.shape, x.shape[:-1])
    x = np.broadcast_to(x, shape + (3,))
    t = np.broadcast_to(t, shape)
    total = 0.0
    # accumulate k and -k in fixed chunks; np.sum reduces pairwise within a chunk
    for k0 in range(1, K + 1, chunk):
        ks = np.arange(k0, min(k0 + chunk, K + 1))
        vp = _mode_values(x, ks, params, deriv)
        vm = _mode_values(x, -ks, params, deriv)
        ph = np.exp(1j * params.omega * np.multiply.outer(ks, t))
        ph = ph.reshape(ph.shape + (1,) * (vp.ndim - ph.ndim))
        total = total + np.sum(ph * vp + np.conj(ph) * vm, axis=0)
    return total


def phi_perp(t, x, params: FlowParams, tol=1e-10, K=None, K_hard=200_000):
    """Purely periodic vorticity kernel as a truncated mode series.

    Returns (value, TruncationCertificate). The mode count is the smallest
    K whose certified tail is below ``tol`` at the smallest |x| supplied,
    unless ``K`` is given.
    """
    x, r = _nonzero(x)
    C4 = c4_constant(params.lam, params.omega)
    if K is None:
        K = choose_modes(r, tol, params, 0, K_hard, C4)
    val = _perp_series(t, x, params, K, 0)
    if np.any(np.abs(val.imag) > 1e-12 * max(np.max(np.abs(val)), 1e-300)):
        raise ArithmeticError("mode pairing failed to produce a real series")
    cert = TruncationCertificate(K, perp_tail_bound(r, K, params, C4, 0), "sum_{|k|>K} exp(-C4 sqrt(eta_k)|x|)/(4 pi |x|), integral comparison")
    return val.real, cert


def grad_phi_perp(t, x, params: FlowParams, tol=1e-10, K=None, K_hard=200_000):
    """Gradient of phi_perp, shape (..., 3), with its certificate."""
    x, r = _nonzero(x)
    C4 = c4_constant(params.lam, params.omega)
    if K is None:
        K = choose_modes(r, tol, params, 1, K_hard, C4)
    val = _perp_series(t, x, params, K, 1)
    if np.any(np.abs(val.imag) > 1e-12 * max(np.max(np.abs(val)), 1e-300)):
        raise ArithmeticError("mode pairing failed to produce a real series")
    cert = TruncationCertificate(K, perp_tail_bound(r, K, params, C4, 1), "(lam + 1/|x| + sqrt(eta_k)) exp(-C4 sqrt(eta_k)|x|)/(4 pi |x|), integral comparison")
    return val.real, cert


def lq_time_norm(kernel_id, x, q, params: FlowParams, rtol=1e-6, series_tol=1e-12, n0=32, n_max=2**18):
    """(1/T) int_0^T |kernel(t, x)|^q dt, to the power 1/q, by periodic trapezoid with doubling."""
    if q < 1:
        raise ValueError("q must be >= 1")
    x, r = _nonzero(np.asarray(x, dtype=float).reshape(3))
    deriv = {"phi_perp": 0, "grad_phi_perp": 1}[kernel_id]
    C4 = c4_constant(params.lam, params.omega)
    K = choose_modes(r, series_tol, params, deriv, C4=C4)
    ks = np.arange(1, K + 1)
    vp = _mode_values(x, ks, params, deriv)
    vm = _mode_values(x, -ks, params, deriv)

    block = max(1, 2_000_000 // K)

    def norm(n):
        acc = 0.0
        # blocks of times keep the phase matrix small
        for j0 in range(0, n, block):
            t = params.period * np.arange(j0, min(j0 + block, n)) / n
            ph = np.exp(1j * params.omega * np.multiply.outer(t, ks))
            if deriv:
                f = (ph @ vp + np.conj(ph) @ vm).real
                a = np.linalg.norm(f, axis=-1)
            else:
                a = np.abs((ph @ vp + np.conj(ph) @ vm).real)
            acc += np.sum(a**q)
        return (acc / n) ** (1.0 / q)

    n = max(n0, 4 * K)
    prev = norm(n)
    while True:
        n *= 2
        cur = norm(n)
        if abs(cur - prev) <= rtol * abs(cur) or n >= n_max:
            return float(cur)
        prev = cur


# --- multiplier diagnostic ------------------------------------------------------------


def smoothstep_cutoff(eta):
    """chi(eta): 0 for |eta| <= 1/2, 1 for |eta| >= 1, quintic smoothstep between."""
    t = np.clip((np.abs(eta) - 0.5) / 0.5, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t * t)


def smoothstep_cutoff_deriv(eta):
    t = np.clip((np.abs(eta) - 0.5) / 0.5, 0.0, 1.0)
    return np.sign(eta) * 30.0 * t * t * (1.0 - t) ** 2 / 0.5


def multiplier_values(alpha, x, gamma, params: FlowParams, eta):
    """m_{alpha,x}(eta) and eta d/deta m on the given eta array.

    ``alpha`` is 0 for the kernel itself or j in {1, 2, 3} for d/dx_j.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    r = np.linalg.norm(x)
    eta = np.asarray(eta, dtype=float)
    # m vanishes for |eta| <= 1/2; evaluate the kernel at a harmless frequency there
    nu = params.mode_frequency(np.where(np.abs(eta) > 0.25, eta, 1.0))
    w = sqrt_neg_mu(nu, params.lam)
    dw = -1j / (2.0 * w) * params.omega  # d w / d eta
    G = np.exp(1j * w * r - params.lam * x[0] / 2.0) / (FOUR_PI * r)
    dG = G * 1j * r * dw
    if alpha:
        j = int(alpha) - 1
        gj = 1j * w * x[j] / r - x[j] / r**2 - (params.lam / 2.0 if j == 0 else 0.0)
        D = G * gj
        dD = dG * gj + G * 1j * x[j] / r * dw
    else:
        D, dD = G, dG
    a = np.abs(eta)
    chi = smoothstep_cutoff(eta)
    dchi = smoothstep_cutoff_deriv(eta)
    with np.errstate(divide="ignore", invalid="ignore"):
        pw = np.where(a > 0, a**gamma, 0.0)
        dpw = np.where(a > 0, gamma * np.sign(eta) * a ** (gamma - 1.0), 0.0)
    m = chi * pw * D
    dm = dchi * pw * D + chi * dpw * D + chi * pw * dD
    return m, eta * dm


@dataclass
class MultiplierReport:
    alpha: int
    x: list
    gamma: float
    sup: float
    normalized: float
    eta_at_sup: float
    C5: float
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        return dict(self.__dict__)


def multiplier_diag(alpha, x, gamma, params: FlowParams, n_eta=20001, eta_max=1e4):
    """Sup over log-spaced |eta| in [1/2, eta_max] of |m| + |eta d_eta m|.

    Both signs of eta give the same moduli (conjugate symmetry), so the
    positive half-line is scanned.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    eta = np.geomspace(0.5, eta_max, n_eta)
    m, edm = multiplier_values(alpha, x, gamma, params, eta)
    val = np.abs(m) + np.abs(edm)
    i = int(np.argmax(val))
    c = constants(params)
    r = float(np.linalg.norm(x))
    order = 1 if alpha else 0
    norm = float(val[i]) * r ** (1 + order + 2 * gamma) * np.exp(c.C5 * r)
    return MultiplierReport(int(alpha), [float(v) for v in np.ravel(x)], float(gamma), float(val[i]), norm, float(eta[i]), c.C5)


# --- per-mode velocity kernel -----------------------------------------------------------

_GL = {n: leggauss(n) for n in (8, 12, 16)}


def _line_panels(r0, sigma, eta, w, params, tau_max, nodes):
    # panel length: a fraction of the distance to the origin, capped by half an oscillation
    lam = params.lam
    osc = np.pi / (abs(eta) / lam + abs(w.real) + 1.0)
    edges = [0.0]
    while edges[-1] < tau_max:
        t = edges[-1]
        step = min(0.4 * np.hypot(r0, t), osc)
        edges.append(min(t + step, tau_max))
    edges = np.asarray(edges)
    xg, wg = _GL[nodes]
    a, b = edges[:-1, None], edges[1:, None]
    tau = (0.5 * (b - a) * xg + 0.5 * (a + b)).ravel()
    wt = (0.5 * (b - a) * wg).ravel()
    return tau, wt


def _perp_line(x, eta, params, deriv, nodes, tau_scale):
    # Hessian (deriv=0) or third derivatives (deriv=1) of Psi at points sharing a ray direction
    lam = params.lam
    w = sqrt_neg_mu(eta, lam)
    r = np.linalg.norm(x, axis=-1)
    sigma = np.where(x[:, 0] >= 0, 1.0, -1.0)
    r0 = float(r.min())
    rate = w.imag - lam / 2.0
    tau_max = tau_scale * max(60.0, 10.0 * float(r.max()), 30.0 / rate)
    tau, wt = _line_panels(r0, 1.0, eta, w, params, tau_max, nodes)
    order = 2 + deriv
    shape = (len(x),) + (3,) * order
    acc = np.zeros(shape, dtype=complex)
    step = max(1, int(2_000_000 // (len(x) * 3**order)))
    for i in range(0, len(tau), step):
        tt = tau[i : i + step]
        pts = x[:, None, :] + (sigma[:, None] * tt[None, :])[..., None] * np.array([1.0, 0.0, 0.0])
        hn = helmholtz_derivs(pts, 0.0, 0.0, order)[order]
        hh = helmholtz_derivs(pts, w, lam / 2.0, order)[order]
        ph = np.exp(-1j * sigma[:, None] * eta * tt[None, :] / lam) * wt[i : i + step]
        ph = ph.reshape(ph.shape + (1,) * order)
        acc += np.sum(ph * (hn - hh), axis=1)
    # one integration-by-parts term for the Newton part beyond tau_max
    end = x + (sigma * tau_max)[:, None] * np.array([1.0, 0.0, 0.0])
    hn_end = helmholtz_derivs(end, 0.0, 0.0, order)[order]
    ph_end = np.exp(-1j * sigma * eta * tau_max / lam) / (1j * sigma * eta / lam)
    acc += ph_end.reshape((-1,) + (1,) * order) * hn_end
    return (sigma / lam).reshape((-1,) + (1,) * order) * acc


def gamma_perp_mode(k, x, params: FlowParams, tol=1e-6, deriv=0, return_error=False):
    """Per-mode velocity kernel Gamma_perp^(k)(x) = delta Gamma_H + grad grad Psi.

    Psi = N * Gamma_H solves (i eta - lam d_1) Psi = N - Gamma_H, so its
    derivatives are oscillatory line integrals of derivatives of N - Gamma_H
    along the drift axis, taken away from the origin. ``deriv=1`` returns the
    gradient indexed [..., m, j, l]. The error estimate compares two
    quadrature densities.
    """
    if k == 0:
        raise ValueError("k must be nonzero; use gamma0 for the steady mode")
    x, r = _nonzero(x)
    shp = x.shape[:-1]
    flat = x.reshape(-1, 3)
    eta = params.mode_frequency(k)
    order = 2 + deriv
    out = np.empty((len(flat),) + (3,) * order, dtype=complex)
    err = np.zeros(len(flat))
    rr = np.linalg.norm(flat, axis=-1)
    # group points with comparable radii so they can share panels
    bins = np.floor(np.log(rr) / np.log(1.5)).astype(int)
    for b in np.unique(bins):
        idx = np.nonzero(bins == b)[0]
        for i0 in range(0, len(idx), 512):
            ii = idx[i0 : i0 + 512]
            fine = _perp_line(flat[ii], eta, params, deriv, 12, 1.0)
            if return_error or tol is not None:
                coarse = _perp_line(flat[ii], eta, params, deriv, 8, 1.0)
                diff = np.abs(fine - coarse).reshape(len(ii), -1).max(axis=1)
                err[ii] = diff / np.maximum(np.abs(fine).reshape(len(ii), -1).max(axis=1), 1e-300)
            out[ii] = fine
    hd = helmholtz_derivs(flat, sqrt_neg_mu(eta, params.lam), params.lam / 2.0, deriv)[deriv]
    if deriv == 0:
        out += hd[:, None, None] * _EYE
    else:
        out += hd[:, :, None, None] * _EYE
    if tol is not None and np.any(err > max(tol, 1e-2)):
        raise RuntimeError(f"gamma_perp_mode quadrature did not converge: relative error {err.max():.2e}")
    out = out.reshape(shp + (3,) * order)
    if return_error:
        return out, err.reshape(shp)
    return out
