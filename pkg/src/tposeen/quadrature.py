"""Quadrature for convolutions of singular, anisotropically decaying kernels.

Analytic sources are integrated on two spherical grids, one centred at the
evaluation point and one at the source centre, joined by a smooth partition
of unity. Grid sources use the trapezoid sum away from the evaluation point
and a spherical ball with spline-interpolated data near it.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import ndimage

from .special import FlowParams, wake
from .steady import gamma0, grad_gamma0

_E1 = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class QuadratureSpec:
    """Resolution of the spherical grids and the truncation of the domain.

    ``split_radius`` ends the innermost radial panel around each centre,
    where the singular kernel is handled by a squared radial variable.
    Radial panels then double in length up to ``box_half_length``.
    """

    split_radius: float = 1.0
    radial_order: int = 10
    polar_order: int = 6
    azimuth_order: int = 32
    box_half_length: float = 400.0
    grid_spacing: float = 0.5
    tail_model: str = "declared"
    partition_power: float = 8.0
    ball_cells: float = 14.0

    def __post_init__(self):
        if not self.split_radius > 0:
            raise ValueError("split_radius must be positive")
        if not self.box_half_length > 0:
            raise ValueError("box_half_length must be positive")
        if min(self.radial_order, self.polar_order, self.azimuth_order) < 2:
            raise ValueError("quadrature orders must be at least 2")

    def coarse(self):
        """A spec with roughly two thirds of the nodes in every direction."""
        return replace(
            self,
            radial_order=max(2, (2 * self.radial_order) // 3),
            polar_order=max(2, (2 * self.polar_order) // 3),
            azimuth_order=max(4, (2 * self.azimuth_order) // 3),
        )

    def refined(self, factor=2):
        return replace(
            self,
            radial_order=self.radial_order * factor,
            polar_order=self.polar_order * factor,
            azimuth_order=self.azimuth_order * factor,
        )


@dataclass
class ConvolutionResult:
    value: np.ndarray
    error: float
    tail: float
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.error < 0 or self.tail < 0:
            raise ValueError("error fields must be nonnegative")

    @property
    def budget(self):
        return self.error + self.tail


@dataclass
class AnalyticSource:
    """Source given as a function of y with shape (..., 3) -> (..., *shape).

    Either ``support_radius`` (source vanishes for |y - center| > radius) or
    ``decay`` = (M, A), meaning |g(y)| <= M (1 + |y - center|)^-A, must be
    declared so that the domain truncation can be bounded. An optional
    ``angular(r)`` bounding the integral of |g| over the sphere of radius r
    about the center sharpens that bound for sources concentrated in a wake.
    """

    func: Callable
    support_radius: Optional[float] = None
    decay: Optional[tuple] = None
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: Optional[Callable] = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        if self.support_radius is None and self.decay is None:
            raise ValueError("declare a support radius or a decay model for the source")
        if self.support_radius is not None and not self.support_radius > 0:
            raise ValueError("support radius must be positive")

    def __call__(self, y):
        return self.func(y)


@dataclass
class GridSource:
    """Source sampled on the nodes -L + i h, i < N, of a cube of half-length L.

    ``envelope`` is the declared decay shape outside the cube; its amplitude
    is fitted on the outermost shell of nodes to bound the truncation tail.
    """

    values: np.ndarray
    half_length: float
    envelope: Optional[Callable] = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim < 3 or not (v.shape[0] == v.shape[1] == v.shape[2]):
            raise ValueError("grid source must have shape (N, N, N, ...)")
        self.values = v
        self._coef = {}

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def spacing(self):
        return 2.0 * self.half_length / self.n

    @property
    def value_shape(self):
        return self.values.shape[3:]

    def nodes(self, stride=1):
        ax = -self.half_length + self.spacing * np.arange(0, self.n, stride)
        X = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)
        return X

    def coefficients(self, order=5):
        # spline coefficients, one array per component
        if order not in self._coef:
            flat = self.values.reshape(self.values.shape[:3] + (-1,))
            coef = []
            for c in range(flat.shape[-1]):
                comp = flat[..., c]
                if np.iscomplexobj(comp):
                    re = ndimage.spline_filter(comp.real, order=order, mode="grid-wrap")
                    im = ndimage.spline_filter(comp.imag, order=order, mode="grid-wrap")
                    coef.append(re + 1j * im)
                else:
                    coef.append(ndimage.spline_filter(comp, order=order, mode="grid-wrap"))
            self._coef[order] = coef
        return self._coef[order]

    def interpolate(self, y, order=5):
        y = np.asarray(y, dtype=float)
        idx = ((y + self.half_length) / self.spacing).reshape(-1, 3).T
        out = []
        for c in self.coefficients(order):
            if np.iscomplexobj(c):
                v = ndimage.map_coordinates(c.real, idx, order=order, mode="grid-wrap", prefilter=False)
                v = v + 1j * ndimage.map_coordinates(c.imag, idx, order=order, mode="grid-wrap", prefilter=False)
            else:
                v = ndimage.map_coordinates(c, idx, order=order, mode="grid-wrap", prefilter=False)
            out.append(v)
        out = np.stack(out, axis=-1)
        return out.reshape(y.shape[:-1] + self.value_shape)

    def _shell_mask(self):
        n = self.n
        mask = np.zeros((n, n, n), dtype=bool)
        mask[[0, -1], :, :] = True
        mask[:, [0, -1], :] = True
        mask[:, :, [0, -1]] = True
        return mask

    def shell_amplitude(self):
        """max |g| / envelope over the outermost shell of nodes."""
        if self.envelope is None:
            return 0.0
        return float(np.max(self.shell_ratio()))

    def shell_ratio(self, width=5):
        """|g| / envelope on the shell nodes (zero inside), max-filtered over ``width`` nodes."""
        if "ratio" not in self._coef:
            mask = self._shell_mask()
            ratio = np.zeros(mask.shape)
            if self.envelope is not None:
                pts = self.nodes()[mask]
                mag = np.abs(self.values[mask].reshape(len(pts), -1)).max(axis=1)
                ratio[mask] = mag / self.envelope(pts)
                ratio = np.where(mask, ndimage.maximum_filter(ratio, size=width, mode="nearest"), 0.0)
            self._coef["ratio"] = ratio
        return self._coef["ratio"]

    def tail_amplitude(self, y):
        """Envelope amplitude for points outside the cube, taken from the shell node in the same direction."""
        y = np.asarray(y, dtype=float)
        h, L = self.spacing, self.half_length
        c = -h / 2.0
        d = y - c
        inf = np.max(np.abs(d), axis=-1, keepdims=True)
        q = c + d * ((L - h / 2.0) / np.where(inf > 0, inf, 1.0))
        idx = np.clip(np.rint((q + L) / h).astype(int), 0, self.n - 1)
        return self.shell_ratio()[idx[..., 0], idx[..., 1], idx[..., 2]]

    def angular_tail(self, r, n_phi=16):
        """Integral over the sphere of radius r of tail_amplitude * envelope, per radius.

        The polar variable is the wake coordinate s(lam y) on panels refined
        towards s = 0, so a thin wake is resolved at any radius.
        """
        r = np.atleast_1d(np.asarray(r, dtype=float))
        lam = getattr(self.envelope, "lam", 1.0)
        phi = 2 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
        out = np.empty(len(r))
        for i, ri in enumerate(r):
            top = 2.0 * lam * ri
            edges = np.unique(np.concatenate([[0.0], np.minimum(np.geomspace(0.25, top, max(2, int(np.log2(max(top, 1.0) / 0.25)) + 2)), top)]))
            sl, ws = _panels(edges, 8)
            c = sl / (lam * ri) - 1.0
            sn = np.sqrt(np.clip(1.0 - c * c, 0.0, None))
            y = ri * np.stack([np.repeat(c, n_phi), np.outer(sn, np.cos(phi)).ravel(), np.outer(sn, np.sin(phi)).ravel()], -1)
            w = np.repeat(ws / (lam * ri), n_phi) * (2 * np.pi / n_phi)
            out[i] = np.sum(w * self.tail_amplitude(y) * self.envelope(y))
        return out


# --- contraction of kernel values with source values ---------------------------------


def _contract(mode, K, S):
    if callable(mode):
        return mode(K, S)
    if mode == "scalar":
        return K.reshape(K.shape + (1,) * (S.ndim - K.ndim)) * S
    if mode == "matvec":
        return np.einsum("...jl,...l->...j", K, S)
    if mode == "wedge":
        return np.cross(K, S)
    if mode == "grad_matvec":
        return np.einsum("...mjl,...l->...mj", K, S)
    if mode == "grad_wedge":
        # K[..., m, i] = d_m d_i phi; result [..., m, :] = (d_m grad phi) ^ S
        return np.cross(K, S[..., None, :])
    raise ValueError(f"unknown contraction {mode!r}")


# --- spherical grids -----------------------------------------------------------------


def _panels(edges, n, square_first=False):
    xg, wg = leggauss(n)
    nodes, weights = [], []
    for i, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        if b <= a:
            continue
        if square_first and i == 0 and a == 0.0:
            # r = b t^2 removes singularities up to |z|^-2.5 against r^2 dr
            t = 0.5 * (xg + 1.0)
            nodes.append(b * t * t)
            weights.append(b * 2.0 * t * 0.5 * wg)
        else:
            nodes.append(0.5 * (b - a) * xg + 0.5 * (a + b))
            weights.append(0.5 * (b - a) * wg)
    return np.concatenate(nodes), np.concatenate(weights)


_POLAR_EDGES = np.array([0.0, 1e-4, 1e-3, 1e-2, 0.04, 0.15, 0.45, 1.0])


def _polar_nodes(n):
    # cos(theta) on [-1, 1], panels packed geometrically at both poles
    e = np.concatenate([-1.0 + _POLAR_EDGES, (1.0 - _POLAR_EDGES[::-1])[1:]])
    return _panels(e, n)


def _radial_edges(r0, r1, split, extra=()):
    if r1 <= r0:
        return np.array([r0, r0])
    e = [r0]
    if r0 == 0.0:
        e.append(min(split, r1))
    while e[-1] < r1:
        e.append(min(max(2.0 * e[-1], e[-1] + split), r1))
    e = np.asarray(e + [x for x in extra if r0 < x < r1])
    return np.unique(e)


def _sphere(center, edges, spec):
    r, wr = _panels(edges, spec.radial_order, square_first=edges[0] == 0.0)
    c, wc = _polar_nodes(spec.polar_order)
    nphi = spec.azimuth_order
    phi = 2 * np.pi * (np.arange(nphi) + 0.5) / nphi
    s = np.sqrt(np.clip(1.0 - c * c, 0.0, None))
    dirs = np.stack(
        [np.repeat(c, nphi), np.outer(s, np.cos(phi)).ravel(), np.outer(s, np.sin(phi)).ravel()], axis=-1
    )
    wd = np.repeat(wc, nphi) * (2 * np.pi / nphi)
    return r, wr * r * r, dirs, wd


def _integrate_sphere(center, edges, spec, integrand, value_shape, chunk=2_000_000):
    r, wr, dirs, wd = _sphere(center, edges, spec)
    total = None
    nr = max(1, chunk // max(1, len(dirs) * int(np.prod(value_shape, dtype=int) or 1)))
    for i in range(0, len(r), nr):
        pts = center + r[i : i + nr, None, None] * dirs[None, :, :]
        w = wr[i : i + nr, None] * wd[None, :]
        vals = integrand(pts)
        part = np.tensordot(w, vals, axes=([0, 1], [0, 1]))
        total = part if total is None else total + part
    return total


# --- analytic sources -----------------------------------------------------------------


def _analytic_value(kernel, source, x, spec, contract, L):
    c = source.center
    xs = x - c
    d = float(np.linalg.norm(xs))
    p = spec.partition_power
    rho = source.support_radius
    reach = L if rho is None else min(L, rho)
    split = spec.split_radius

    def inside(y):
        return np.linalg.norm(y - c, axis=-1) <= L

    def weight_x(y):
        # partition weight of the grid centred at x
        q = np.linalg.norm(y - x, axis=-1) / np.maximum(np.linalg.norm(y - c, axis=-1), 1e-300)
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + q**p)

    def part_x(pts):
        y = pts
        K = kernel(x - y)
        S = source(y)
        w = weight_x(y)
        if rho is None:
            w = w * inside(y)
        return _weighted(contract, K, S, w)

    def part_c(pts):
        y = pts
        K = kernel(x - y)
        S = source(y)
        w = 1.0 - weight_x(y)
        return _weighted(contract, K, S, w)

    shape = _value_shape(kernel, source, x, contract)
    if rho is not None and d >= rho + split:
        # the kernel is smooth over the whole support: one grid on the source
        edges = _radial_edges(0.0, rho, split)
        return _integrate_sphere(c, edges, spec, lambda y: _weighted(contract, kernel(x - y), source(y), np.ones(y.shape[:-1])), shape)
    if d < 1e-12:
        edges = _radial_edges(0.0, reach, split)
        val = _integrate_sphere(c, edges, spec, lambda y: _weighted(contract, kernel(x - y), source(y), np.ones(y.shape[:-1])), shape)
        return val
    # grid centred at x covers the source region
    if rho is None:
        ex = _radial_edges(0.0, L + d, split, extra=(d,))
    else:
        lo = max(0.0, d - rho)
        ex = _radial_edges(0.0, d + rho, split, extra=(lo, d))
    val = _integrate_sphere(x, ex, spec, part_x, shape)
    ec = _radial_edges(0.0, reach, split, extra=(d,))
    val = val + _integrate_sphere(c, ec, spec, part_c, shape)
    return val


def _weighted(contract, K, S, w):
    v = _contract(contract, K, S)
    return v * w.reshape(w.shape + (1,) * (v.ndim - w.ndim))


def _value_shape(kernel, source, x, contract):
    probe = np.array([[x[0] + 0.37, x[1] - 0.21, x[2] + 0.13]])
    v = _contract(contract, kernel(x - probe), source(probe))
    return v.shape[1:]


def _analytic_tail(kernel, source, x, L, spec):
    # int_{|y - c| > L} |K(x - y)| M (1 + |y - c|)^-A dy on a coarse grid, y = c + (L/t) e
    if source.support_radius is not None and source.support_radius <= L:
        return 0.0
    M, A = source.decay
    c = source.center
    t, wt = _panels(np.array([0.0, 0.25, 0.5, 1.0]), 8)
    rr = L / t
    wr = wt * L / t**2 * rr**2
    cc, wc = _polar_nodes(4)
    nphi = 16
    phi = 2 * np.pi * (np.arange(nphi) + 0.5) / nphi
    s = np.sqrt(np.clip(1 - cc * cc, 0, None))
    dirs = np.stack([np.repeat(cc, nphi), np.outer(s, np.cos(phi)).ravel(), np.outer(s, np.sin(phi)).ravel()], -1)
    wd = np.repeat(wc, nphi) * 2 * np.pi / nphi
    y = c + rr[:, None, None] * dirs[None]
    K = kernel(x - y)
    mag = np.sqrt(np.sum(np.abs(K.reshape(K.shape[:2] + (-1,))) ** 2, axis=-1))
    if source.angular is not None:
        # sup of the kernel over the sphere times the angular mass of the source
        return float(np.sum(wr * mag.max(axis=1) * source.angular(rr)))
    env = M * (1.0 + rr[:, None]) ** (-A)
    return float(np.sum(wr[:, None] * wd[None, :] * mag * env))


def convolve_r3(kernel, source, x, spec: QuadratureSpec = QuadratureSpec(), contract="scalar", estimate_error=True):
    """int K(x - y) g(y) dy over R^3 with quadrature and truncation estimates.

    ``kernel`` maps points (..., 3) to values (..., *kshape); ``source`` is an
    AnalyticSource or a GridSource; ``contract`` combines kernel and source
    values ("scalar", "matvec", "wedge", "grad_matvec", "grad_wedge" or a
    callable). The error estimate compares the result with a coarser rule.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    if isinstance(source, GridSource):
        return _grid_convolve(kernel, source, x, spec, contract, estimate_error)
    if not isinstance(source, AnalyticSource):
        raise TypeError("source must be an AnalyticSource or a GridSource")
    d = float(np.linalg.norm(x - source.center))
    L = spec.box_half_length
    if source.support_radius is not None:
        if source.support_radius >= L:
            raise ValueError("box half-length must exceed the source support radius")
    else:
        L = max(L, 4.0 * d + 4.0)
    val = _analytic_value(kernel, source, x, spec, contract, L)
    err = 0.0
    if estimate_error:
        coarse = _analytic_value(kernel, source, x, spec.coarse(), contract, L)
        err = float(np.max(np.abs(val - coarse)))
        if not np.isfinite(err):
            raise ArithmeticError("quadrature produced non-finite values")
    tail = _analytic_tail(kernel, source, x, L, spec)
    return ConvolutionResult(val, err, tail, {"L": L})


# --- grid sources ---------------------------------------------------------------------


def _smooth_step(t):
    # C-infinity step: 0 for t <= 0, 1 for t >= 1
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def _ball_cutoff(rho):
    # 1 on rho <= 1/4, 0 on rho >= 1
    return 1.0 - _smooth_step((rho - 0.25) / 0.75)


def _grid_sum(kernel, source, x, contract, radius, stride):
    h = source.spacing * stride
    y = source.nodes(stride).reshape(-1, 3)
    g = source.values[::stride, ::stride, ::stride].reshape((len(y),) + source.value_shape)
    nz = np.abs(g.reshape(len(y), -1)).max(axis=1) > 0
    y, g = y[nz], g[nz]
    total = None
    for i in range(0, len(y), 20000):
        yy = y[i : i + 20000]
        z = x - yy
        dist = np.linalg.norm(z, axis=-1)
        w = (1.0 - _ball_cutoff(dist / radius)) * h**3
        safe = np.where(dist[:, None] > 0, z, 1.0)
        K = kernel(safe)
        part = np.sum(_weighted(contract, K, g[i : i + 20000], w), axis=0)
        total = part if total is None else total + part
    return total


def _grid_ball(kernel, source, x, contract, radius, spec, order=5):
    edges = np.array([0.0, radius / 4.0, radius / 2.0, radius])

    def integrand(pts):
        z = x - pts
        w = _ball_cutoff(np.linalg.norm(z, axis=-1) / radius)
        # the grid data ends half a cell beyond the outer nodes
        lo, hi = -source.half_length - source.spacing / 2, source.half_length - source.spacing / 2
        w = w * np.all((pts >= lo) & (pts <= hi), axis=-1)
        return _weighted(contract, kernel(z), source.interpolate(pts, order), w)

    probe = np.array([[x[0] + 0.1, x[1], x[2]]])
    shape = _contract(contract, kernel(x - probe), source.interpolate(probe)).shape[1:]
    return _integrate_sphere(x, edges, spec, integrand, shape)


def _grid_convolve(kernel, source, x, spec, contract, estimate_error):
    L = source.half_length
    radius = max(spec.ball_cells * source.spacing, 1e-12)
    near = np.all(np.abs(x) < L + radius)
    val = _grid_sum(kernel, source, x, contract, radius, 1)
    if near:
        val = val + _grid_ball(kernel, source, x, contract, radius, spec)
    err = 0.0
    if estimate_error:
        # coarse trapezoid sum on every other node, with the same ball
        coarse = _grid_sum(kernel, source, x, contract, radius * 2, 2)
        if near:
            coarse = coarse + _grid_ball(kernel, source, x, contract, radius * 2, spec.coarse(), order=3)
        err = float(np.max(np.abs(val - coarse)))
    tail = 0.0
    M = source.shell_amplitude()
    if M > 0:
        env = source.envelope

        # the amplitude is fitted per direction, so an off-wake noise floor
        # on one face does not inflate the wake tail
        def outside(y):
            out = np.any(np.abs(y) > L, axis=-1)
            return source.tail_amplitude(y) * env(y) * out

        def kmag(z):
            K = kernel(z)
            K = K.reshape(z.shape[:-1] + (-1,))
            return np.sqrt(np.sum(np.abs(K) ** 2, axis=-1))

        src = AnalyticSource(outside, decay=(M * _envelope_sup_const(env), _envelope_exponent(env)), angular=source.angular_tail)
        tail_spec = replace(spec.coarse(), box_half_length=max(spec.box_half_length, 4 * np.linalg.norm(x) + 4 * L))
        res = convolve_r3(kmag, src, x, tail_spec, "scalar", estimate_error=False)
        tail = float(abs(res.value)) + res.tail
    return ConvolutionResult(val, err, tail, {"ball_radius": radius})


def _envelope_exponent(env):
    return getattr(env, "exponent", 3.0)


def _envelope_sup_const(env):
    return getattr(env, "sup_const", 1.0)


class Envelope:
    """Decay shape [(1+|y|)(1+s(lam y))]^-a (1+|y|)^-b e^{-alpha s(lam y)} used for tail budgets."""

    def __init__(self, a=0.0, b=3.0, lam=1.0, alpha=0.0):
        if alpha < 0:
            raise ValueError("alpha must be nonnegative")
        self.a, self.b, self.lam, self.alpha = float(a), float(b), float(lam), float(alpha)
        self.exponent = self.a + self.b
        self.sup_const = 1.0

    def __call__(self, y):
        r = np.linalg.norm(y, axis=-1)
        s = wake(self.lam * np.asarray(y, dtype=float))
        return ((1 + r) * (1 + s)) ** (-self.a) * (1 + r) ** (-self.b) * np.exp(-self.alpha * s)


# --- space-time convolution -----------------------------------------------------------


def convolve_spacetime(kernel_modes, source_modes, t, x, spec: QuadratureSpec = QuadratureSpec(), contract="scalar", params: FlowParams = FlowParams()):
    """sum_k e^{i omega k t} (K_k * g_k)(x) for kernels and sources given per temporal mode.

    Both arguments are dicts keyed by mode index k. Returns a
    ConvolutionResult whose value has the leading shape of ``t``.
    """
    if set(kernel_modes) != set(source_modes):
        raise ValueError("kernel and source modes must cover the same indices")
    t = np.asarray(t, dtype=float)
    total, err, tail = None, 0.0, 0.0
    per_mode = {}
    for k in sorted(kernel_modes):
        res = convolve_r3(kernel_modes[k], source_modes[k], x, spec, contract)
        per_mode[k] = res.value
        ph = np.exp(1j * params.omega * k * t)
        term = ph.reshape(ph.shape + (1,) * np.ndim(res.value)) * res.value
        total = term if total is None else total + term
        err += res.error
        tail += res.tail
    return ConvolutionResult(total, err, tail, {"modes": per_mode})


# --- verifiers of the convolution estimates --------------------------------------------


@dataclass
class VerifierReport:
    name: str
    parameters: dict
    in_hypothesis: bool
    sup_ratio: float
    points: list
    ratios: list
    errors: list

    def to_dict(self):
        return {
            "name": self.name,
            "parameters": dict(self.parameters),
            "in_hypothesis": bool(self.in_hypothesis),
            "sup_ratio": float(self.sup_ratio),
            "points": [[float(v) for v in p] for p in self.points],
            "ratios": [float(v) for v in self.ratios],
            "errors": [float(v) for v in self.errors],
        }


def _ray_points(radii, directions):
    pts = []
    for d in directions:
        d = np.asarray(d, dtype=float)
        d = d / np.linalg.norm(d)
        pts.extend(r * d for r in radii)
    return np.array(pts)


_VERIFY_SPEC = QuadratureSpec(split_radius=0.5, radial_order=10, polar_order=6, azimuth_order=48)


def _scan(name, params_dict, ok, kernel, source, shape_fn, points, spec, contract="scalar"):
    ratios, errors = [], []
    for x in points:
        res = convolve_r3(kernel, source, x, spec, contract)
        v = float(np.real(res.value))
        ratios.append(v / shape_fn(x))
        errors.append((res.error + res.tail) / shape_fn(x))
    ratios = np.array(ratios)
    sup = float(np.max(ratios)) if len(ratios) else 0.0
    return VerifierReport(name, params_dict, ok, sup, list(points), list(ratios), list(errors))


def verify_farwig(A, B, deriv_order, params: FlowParams, radii, spec: QuadratureSpec = _VERIFY_SPEC, M=1.0, directions=((-1, 0, 0), (0, 1, 0))):
    """sup over sampled x of (|D^a Gamma0| * g)(x) / [(1+|x|)(1+s(lam x))]^(-1-|a|/2).

    g(y) = M (1+|y|)^-A (1+s(y))^-B; the points lie on the wake axis and on a
    ray perpendicular to it.
    """
    lam = params.lam
    ok = A >= 2 and A + min(1.0, B) > 3 and (deriv_order == 0 or A + B >= 3.5)

    if deriv_order == 0:
        kernel = lambda z: np.linalg.norm(gamma0(z, params), axis=(-2, -1))
    else:
        kernel = lambda z: np.sqrt(np.sum(grad_gamma0(z, params) ** 2, axis=(-3, -2, -1)))

    def g(y):
        r = np.linalg.norm(y, axis=-1)
        return M * (1 + r) ** (-A) * (1 + wake(y)) ** (-B)

    src = AnalyticSource(g, decay=(M, A)) if M != 0 else AnalyticSource(lambda y: np.zeros(y.shape[:-1]), support_radius=1.0)
    shape = lambda x: ((1 + np.linalg.norm(x)) * (1 + wake(lam * x))) ** (-1.0 - deriv_order / 2.0)
    pts = _ray_points(radii, directions)
    return _scan("farwig", {"A": A, "B": B, "deriv_order": deriv_order, "lam": lam}, ok, kernel, src, shape, pts, spec)


def verify_conv_exp(A, B, alpha, radii, spec: QuadratureSpec = _VERIFY_SPEC):
    """sup over |x| in radii of (1+|x|)^B int |x-y|^-A e^{-alpha|x-y|} (1+|y|)^-B dy."""
    ok = 0 < A < 3 and B > 0 and alpha > 0

    def kernel(z):
        r = np.linalg.norm(z, axis=-1)
        return r ** (-A) * np.exp(-alpha * r)

    src = AnalyticSource(lambda y: (1 + np.linalg.norm(y, axis=-1)) ** (-B), decay=(1.0, B))
    shape = lambda x: (1 + np.linalg.norm(x)) ** (-B)
    pts = _ray_points(radii, ((0.6, 0.8, 0.0),))
    return _scan("conv_exp", {"A": A, "B": B, "alpha": alpha}, ok, kernel, src, shape, pts, spec)


def verify_wake_conv(A, B, radii, spec: QuadratureSpec = _VERIFY_SPEC, M=1.0, directions=((-1, 0, 0), (0, 1, 0), (1, 0, 0))):
    """sup of (1+|x|)^(3/2) int [(1+|x-y|)(1+s(x-y))]^-3/2 (1+|y|)^-A (1+s(y))^-B dy."""
    ok = A > 2 and B >= 0 and A + min(1.0, B) > 3

    def kernel(z):
        return ((1 + np.linalg.norm(z, axis=-1)) * (1 + wake(z))) ** (-1.5)

    def g(y):
        return M * (1 + np.linalg.norm(y, axis=-1)) ** (-A) * (1 + wake(y)) ** (-B)

    src = AnalyticSource(g, decay=(M, A)) if M != 0 else AnalyticSource(lambda y: np.zeros(y.shape[:-1]), support_radius=1.0)
    shape = lambda x: (1 + np.linalg.norm(x)) ** (-1.5)
    pts = _ray_points(radii, directions)
    return _scan("wake_conv", {"A": A, "B": B}, ok, kernel, src, shape, pts, spec)


@dataclass
class ExpShiftReport:
    passed: bool
    violations: int
    worst_margin_wake: float
    worst_margin_abs: float
    n_samples: int
    a: float
    S: float

    def to_dict(self):
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v) if isinstance(v, float) else v) for k, v in self.__dict__.items()}


def exp_shift_margins(a, S, x, y):
    """Logarithmic slack of both shifted-exponential inequalities; nonnegative when they hold."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m1 = 4 * a - wake(a * x) / (1 + S) + wake(a * (x - y))
    m2 = 2 * a - a * np.linalg.norm(x, axis=-1) / (1 + S) + a * np.linalg.norm(x - y, axis=-1)
    return m1, m2


def verify_exp_shift(a, S, n_samples=100_000, seed=0):
    """Sample (x, y) with |y| <= 2S and check both shifted-exponential inequalities.

    Compared in logarithms; a margin below -1e-12 (1 + |terms|) counts as
    a violation.
    """
    if a <= 0 or S <= 0:
        raise ValueError("a and S must be positive")
    rng = np.random.default_rng(seed)
    n = int(n_samples)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    rx = np.exp(rng.uniform(np.log(1e-3), np.log(1e3 * (1 + S)), n))
    x = rx[:, None] * d
    # a quarter of the points on or near the wake axis, where s(x) is small
    m = n // 4
    x[:m, 0] = -np.abs(x[:m, 0])
    x[:m, 1:] *= rng.uniform(0, 1e-2, (m, 1))
    dy = rng.normal(size=(n, 3))
    dy /= np.linalg.norm(dy, axis=1, keepdims=True)
    ry = 2 * S * rng.uniform(0, 1, n) ** (1 / 3)
    y = ry[:, None] * dy
    # include the boundary |y| = 2S and y = 0
    y[::7] *= 2 * S / np.maximum(np.linalg.norm(y[::7], axis=1, keepdims=True), 1e-300)
    y[::11] = 0.0
    m1, m2 = exp_shift_margins(a, S, x, y)
    scale = 1.0 + a * (np.linalg.norm(x, axis=-1) + 2 * S)
    bad = (m1 < -1e-12 * scale) | (m2 < -1e-12 * scale)
    return ExpShiftReport(not bool(np.any(bad)), int(np.sum(bad)), float(np.min(m1)), float(np.min(m2)), n, float(a), float(S))
