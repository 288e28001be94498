"""Sampling along rays and wake sheets, decay fits and the weighted norms."""

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import RectBivariateSpline

from . import _backend
from .periodic import constants
from .quadrature import AnalyticSource, QuadratureSpec, convolve_r3
from .solver import eval_velocity_farfield_periodic, eval_velocity_farfield_steady, eval_vorticity_farfield
from .special import FlowParams, wake

COLUMNS = (
    "kind", "param", "r", "x1", "x2", "x3", "s",
    "v", "grad_v", "w", "grad_w", "curl_v", "curl_w",
    "v_budget", "grad_v_budget", "w_budget", "grad_w_budget", "curl_v_budget", "curl_w_budget",
    "flags",
)
QUANTITIES = ("v", "grad_v", "w", "grad_w", "curl_v", "curl_w")


@dataclass(frozen=True)
class RaySpec:
    """Ray x1 = theta |x| (theta in (-1, 1]) or wake sheet s(x) = sigma.

    Sheet points are x1 = sigma - r, x2^2 + x3^2 = 2 r sigma - sigma^2;
    ``azimuth`` rotates the points about the e1 axis.
    """

    radii: tuple
    theta: Optional[float] = None
    sigma: Optional[float] = None
    azimuth: float = 0.0

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        object.__setattr__(self, "radii", tuple(float(v) for v in r))
        if r.size == 0 or np.any(r <= 0):
            raise ValueError("radii must be positive and nonempty")
        if (self.theta is None) == (self.sigma is None):
            raise ValueError("give exactly one of theta (ray) or sigma (wake sheet)")
        if self.theta is not None and not -1.0 < self.theta <= 1.0:
            raise ValueError("theta must lie in (-1, 1]")
        if self.sigma is not None:
            if not self.sigma > 0:
                raise ValueError("sigma must be positive")
            if np.any(2.0 * r * self.sigma < self.sigma**2):
                raise ValueError("wake sheet needs 2 r sigma >= sigma^2 for all radii")

    @property
    def kind(self):
        return "ray" if self.theta is not None else "sheet"

    @property
    def param(self):
        return float(self.theta if self.theta is not None else self.sigma)

    def points(self, azimuth=None):
        r = np.asarray(self.radii)
        phi = self.azimuth if azimuth is None else azimuth
        if self.kind == "ray":
            x1 = self.theta * r
            rho = r * np.sqrt(1.0 - self.theta**2)
        else:
            x1 = self.sigma - r
            rho = np.sqrt(2.0 * r * self.sigma - self.sigma**2)
        return np.stack([x1, rho * np.cos(phi), rho * np.sin(phi)], axis=-1)


@dataclass
class SampleTable:
    """Rows of sampled magnitudes; missing quantities are NaN."""

    rows: list = field(default_factory=list)

    def column(self, name):
        return np.array([row[name] for row in self.rows], dtype=float if name not in ("kind", "flags") else object)

    def select(self, kind=None, param=None):
        keep = [row for row in self.rows if (kind is None or row["kind"] == kind) and (param is None or abs(row["param"] - param) < 1e-12)]
        return SampleTable(keep)

    def to_csv(self, path=None):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(COLUMNS)
        for row in self.rows:
            wr.writerow([_fmt(row[c]) for c in COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rd = csv.DictReader(fh)
            rows = []
            for rec in rd:
                row = {}
                for c in COLUMNS:
                    row[c] = rec[c] if c in ("kind", "flags") else float(rec[c])
                rows.append(row)
        return cls(rows)


def _fmt(v):
    if isinstance(v, str):
        return v
    return repr(float(v))


def _norm(a):
    return float(np.sqrt(np.sum(np.abs(np.asarray(a)) ** 2)))


def _sup_t(a):
    a = np.asarray(a)
    return float(np.max(np.sqrt(np.sum(np.abs(a.reshape(a.shape[0], -1)) ** 2, axis=1))))


def sample_quantities(fld, f, params: FlowParams, rays, spec: QuadratureSpec = QuadratureSpec(), quantities=QUANTITIES, n_times=16, nonlinear=True):
    """Far-field magnitudes at the points of each ray, as a SampleTable.

    The periodic columns hold the maximum over n_times equispaced times.
    Budgets are the quadrature error plus the truncation tail. A failed
    evaluation leaves NaN and a flag in the row.
    """
    if isinstance(rays, RaySpec):
        rays = [rays]
    bad = set(quantities) - set(QUANTITIES)
    if bad:
        raise ValueError(f"unknown quantities {sorted(bad)}")
    if n_times < 1:
        raise ValueError("need at least one collocation time")
    ts = params.period * np.arange(n_times) / n_times
    table = SampleTable()
    for ray in rays:
        for r, x in zip(ray.radii, ray.points()):
            row = {c: np.nan for c in COLUMNS}
            row.update(kind=ray.kind, param=ray.param, r=r, x1=x[0], x2=x[1], x3=x[2], s=float(wake(x)), flags="")
            flags = []
            for q in quantities:
                try:
                    if q == "v":
                        res = eval_velocity_farfield_steady(x, fld, f, params, spec, 0, nonlinear)
                        row[q] = _norm(res.value)
                    elif q == "grad_v":
                        res = eval_velocity_farfield_steady(x, fld, f, params, spec, 1, nonlinear)
                        row[q] = _norm(res.value)
                    elif q == "w":
                        res = eval_velocity_farfield_periodic(x, ts, fld, f, params, spec, 0, nonlinear)
                        row[q] = _sup_t(res.value)
                    elif q == "grad_w":
                        res = eval_velocity_farfield_periodic(x, ts, fld, f, params, spec, 1, nonlinear)
                        row[q] = _sup_t(res.value)
                    else:
                        steady, perp = eval_vorticity_farfield(x, ts, fld, f, params, spec, nonlinear)
                        res = steady if q == "curl_v" else perp
                        row[q] = _norm(res.value) if q == "curl_v" else _sup_t(res.value)
                    row[q + "_budget"] = res.budget
                except (ArithmeticError, ValueError) as exc:
                    flags.append(f"{q}:{type(exc).__name__}")
            row["flags"] = ";".join(flags)
            table.rows.append(row)
    return table


@dataclass
class DecayFitReport:
    quantity: str
    p: float
    alpha: float
    c: float
    residual_rms: float
    window: tuple
    tail_budget: float
    n_used: int
    n_excluded: int
    alpha_fitted: bool

    def to_dict(self):
        return {
            "quantity": self.quantity,
            "p": float(self.p),
            "alpha": float(self.alpha),
            "c": float(self.c),
            "residual_rms": float(self.residual_rms),
            "window": [float(self.window[0]), float(self.window[1])],
            "tail_budget": float(self.tail_budget),
            "n_used": int(self.n_used),
            "n_excluded": int(self.n_excluded),
            "alpha_fitted": bool(self.alpha_fitted),
        }


def fit_decay_arrays(r, s, m, budget=None, window=None, quantity="", floor_factor=10.0, min_samples=6):
    """Least squares for log m = c - p log r - alpha s over the radius window.

    Samples with m <= floor_factor * budget (or nonpositive, or NaN) are
    excluded and counted. When s is constant over the used samples, alpha
    is absorbed into c and reported as 0.
    """
    r, s, m = (np.asarray(a, dtype=float) for a in (r, s, m))
    b = np.zeros_like(m) if budget is None else np.nan_to_num(np.asarray(budget, dtype=float), nan=np.inf)
    if window is None:
        window = (float(np.min(r)), float(np.max(r)))
    lo, hi = window
    inwin = (r >= lo - 1e-12) & (r <= hi + 1e-12)
    ok = inwin & np.isfinite(m) & (m > 0) & (m > floor_factor * b)
    n_excl = int(np.sum(inwin & ~ok))
    if np.sum(ok) < min_samples:
        raise ValueError(f"underdetermined fit: {int(np.sum(ok))} usable samples, need {min_samples}")
    lr, ss, lm = np.log(r[ok]), s[ok], np.log(m[ok])
    if np.ptp(lr) <= 1e-12:
        raise ValueError("underdetermined fit: all radii coincide")
    fit_alpha = np.ptp(ss) > 1e-9 * (1.0 + np.max(np.abs(ss)))
    cols = [np.ones_like(lr), -lr] + ([-ss] if fit_alpha else [])
    A = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(A, lm, rcond=None)
    res = lm - A @ coef
    alpha = float(coef[2]) if fit_alpha else 0.0
    rel_budget = float(np.max(b[ok] / m[ok])) if np.any(b[ok] > 0) else 0.0
    return DecayFitReport(quantity, float(coef[1]), alpha, float(coef[0]), float(np.sqrt(np.mean(res**2))), (float(lo), float(hi)), rel_budget, int(np.sum(ok)), n_excl, bool(fit_alpha))


def fit_decay(samples: SampleTable, quantity, window=None, kind=None, param=None, floor_factor=10.0):
    """Fit one column of a sample table; see fit_decay_arrays."""
    if quantity not in QUANTITIES:
        raise ValueError(f"unknown quantity {quantity!r}")
    t = samples.select(kind, param)
    if not t.rows:
        raise ValueError("no samples selected")
    return fit_decay_arrays(t.column("r"), t.column("s"), t.column(quantity), t.column(quantity + "_budget"), window, quantity, floor_factor)


@dataclass
class WeightedNorms:
    velnorm: float
    vortnorm: float
    S: float
    epsilon: float
    K: float
    samples: str

    def to_dict(self):
        return {k: (float(v) if not isinstance(v, str) else v) for k, v in self.__dict__.items()}


def weighted_norms(samples: SampleTable, S, epsilon, K_const=None, params: FlowParams = FlowParams()):
    """Discrete versions of the velocity and vorticity norms over samples with |x| > S.

    velnorm = sup |x|(1+s)|v| + (|x|(1+s))^{3/2}|grad v| + sup |x|^3 |w| + |x|^4 |grad w|,
    vortnorm = sup |x|^{3/2} e^{K s/(1+S)} |curl v| + sup |x|^{9/2-eps} e^{K s/(1+S)} |curl w|,
    with s = |x| + x1 and the periodic columns already maximized over time.
    """
    if not 0 < epsilon < 0.25:
        raise ValueError("epsilon must lie in (0, 1/4)")
    K = constants(params).K if K_const is None else float(K_const)
    x = np.stack([samples.column(c) for c in ("x1", "x2", "x3")], axis=-1) if samples.rows else np.zeros((0, 3))
    r = np.linalg.norm(x, axis=-1)
    keep = r > S
    if not np.any(keep):
        raise ValueError("no samples outside the ball of radius S")
    r = r[keep]
    s = np.array([float(wake(p)) for p in x[keep]])
    col = {q: samples.column(q)[keep] for q in QUANTITIES}
    base = r * (1.0 + s)
    ew = np.exp(K * s / (1.0 + S))

    def sup(a):
        return float(np.nanmax(a)) if np.any(np.isfinite(a)) else float("nan")

    vel = sup(base * col["v"] + base**1.5 * col["grad_v"]) + sup(r**3 * col["w"] + r**4 * col["grad_w"])
    vort = sup(r**1.5 * ew * col["curl_v"]) + sup(r ** (4.5 - epsilon) * ew * col["curl_w"])
    return WeightedNorms(vel, vort, float(S), float(epsilon), K, f"{int(np.sum(keep))} samples with |x| > {S}")


# --- kernel surrogate for the purely periodic vorticity -------------------------------------


def _time_rule(period, n_panels=48, order=10, t_min=1e-7):
    xg, wg = leggauss(order)
    edges = np.concatenate([[0.0], np.geomspace(t_min, period, n_panels)])
    a, b = edges[:-1, None], edges[1:, None]
    return (0.5 * (b - a) * xg + 0.5 * (a + b)).ravel(), (0.5 * (b - a) * wg).ravel()


def _periods_needed(r, lam, period, expo=40.0):
    # beyond tau*, |z + lam tau e1|^2/(4 tau) >= expo for every z with |z| = r
    q = 4.0 * expo
    tau = ((np.sqrt(q) + np.sqrt(q + 4.0 * lam * r)) / (2.0 * lam)) ** 2
    return np.ceil(tau / period).astype(np.int64) + 2


def perp_gradient_l1(z, params: FlowParams, backend=None, n_panels=48, order=10):
    """int_0^T |grad phi_perp(t, z)| dt via the drifted heat kernel.

    grad phi_perp(t, z) = T sum_{m>=0} grad H(t + mT, z) - grad phi0(z),
    which has the same temporal modes k != 0 as the mode series.
    """
    z = np.ascontiguousarray(np.asarray(z, dtype=float).reshape(-1, 3))
    r = np.linalg.norm(z, axis=-1)
    if np.any(r == 0):
        raise ValueError("kernel evaluated at z = 0")
    tn, tw = _time_rule(params.period, n_panels, order)
    mm = _periods_needed(r, params.lam, params.period)
    return _backend.get(backend).heat_grad_l1(z, params.lam, params.period, tn, tw, mm)


class PerpKernelTable:
    """Spline of log int_T |grad phi_perp| on (log |z|, sqrt(s(z)/|z|)).

    The second coordinate resolves the wake, whose width shrinks like
    |z|^{-1/2}. Beyond r_max the kernel is set to 0; below r_min it is
    continued as C |z|^-2.
    """

    def __init__(self, params: FlowParams = FlowParams(), r_min=0.02, r_max=150.0, n_r=97, n_v=129, backend=None):
        self.params = params
        self.r_min, self.r_max = float(r_min), float(r_max)
        lr = np.linspace(np.log(r_min), np.log(r_max), n_r)
        v = np.linspace(0.0, np.sqrt(2.0), n_v)
        R, V = np.meshgrid(np.exp(lr), v, indexing="ij")
        c = V**2 - 1.0
        sn = np.sqrt(np.clip(1.0 - c * c, 0.0, None))
        pts = np.stack([R * c, R * sn, np.zeros_like(R)], axis=-1).reshape(-1, 3)
        vals = perp_gradient_l1(pts, params, backend).reshape(R.shape)
        self.values = vals
        self._spline = RectBivariateSpline(lr, v, np.log(np.maximum(vals, 1e-300)), kx=3, ky=3)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        r = np.linalg.norm(z, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            v = np.sqrt(np.clip(wake(z) / np.where(r > 0, r, 1.0), 0.0, 2.0))
        rc = np.clip(r, self.r_min, self.r_max)
        out = np.exp(self._spline.ev(np.log(rc), v))
        out = np.where(r < self.r_min, out * (self.r_min / np.maximum(r, 1e-300)) ** 2, out)
        return np.where(r > self.r_max, 0.0, out)


@lru_cache(maxsize=4)
def perp_kernel_table(params: FlowParams = FlowParams()):
    return PerpKernelTable(params)


def kernel_surrogate_decay(params: FlowParams = FlowParams(), alpha_in=0.25, radii=None, source_exponent=4.5, amplitude=1.0, sigma=1.0, spec: QuadratureSpec = QuadratureSpec(), table=None):
    """Decay exponent of int_T |grad phi_perp| convolved with (1+|y|)^-A e^{-alpha s(lam y)}.

    Evaluated on the wake sheet s(x) = sigma, where only p is fitted.
    """
    if amplitude == 0:
        raise ValueError("zero source: nothing to fit")
    if radii is None:
        radii = np.geomspace(10.0, 40.0, 9)
    table = perp_kernel_table(params) if table is None else table
    lam = params.lam
    A = float(source_exponent)

    def g(y):
        ry = np.linalg.norm(y, axis=-1)
        return amplitude * (1.0 + ry) ** (-A) * np.exp(-alpha_in * wake(lam * y))

    src = AnalyticSource(g, decay=(abs(amplitude), A))
    ray = RaySpec(tuple(radii), sigma=sigma)
    vals, buds = [], []
    for x in ray.points():
        res = convolve_r3(table, src, x, spec)
        vals.append(abs(float(res.value)))
        buds.append(res.budget)
    s = np.full(len(vals), float(sigma))
    rep = fit_decay_arrays(np.asarray(ray.radii), s, np.asarray(vals), np.asarray(buds), quantity=f"surrogate_A{A:g}")
    rep.samples = list(zip(ray.radii, vals, buds))
    return rep
