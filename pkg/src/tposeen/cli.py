"""Command line interface.

    tposeen [--config PATH] [--seed N] [--out DIR] VERB [ACTION]

Verbs: kernel eval|verify, conv verify, solve linear|nonlinear, decay fit,
fixedpoint residual, selfcheck. Reports are JSON with sorted keys, sample
tables CSV; neither carries timestamps, so equal inputs give equal bytes.
The thread count of the FFTs is read from TPOSEEN_THREADS.
"""

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np
from scipy import fft as sfft

from .harness import RaySpec, fit_decay, kernel_surrogate_decay, sample_quantities, weighted_norms
from .periodic import gamma_H, multiplier_diag, perp_tail_bound, phi_perp
from .quadrature import QuadratureSpec, verify_conv_exp, verify_exp_shift, verify_farwig, verify_wake_conv
from .solver import CutoffSpec, ForcingSpec, Grid, dump_field, fixed_point_residual, picard_solve, residual_points, solve_linear
from .special import FlowParams, wake
from .steady import gamma0, phi0, verify_gamma0_bounds


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the field path."""

    def __init__(self, path, msg):
        super().__init__(f"{path}: {msg}")
        self.path = path


DEFAULTS = {
    "forcing": {"amplitudes": {"0": 0.05, "1": 0.025}, "center": [0.0, 0.0, 0.0], "radius": 1.0},
    "grid": {"n": 64, "half_length": 8.0},
    "K_max": 8,
    "quadrature": {},
    "rays": [
        {"sigma": 1.0, "radii": [8.0, 9.7, 11.7, 14.1, 17.1, 20.6, 24.9, 30.0]},
        {"theta": 1.0, "radii": [8.0, 9.7, 11.7, 14.1, 17.1, 20.6, 24.9, 30.0]},
    ],
    "windows": {},
    "quantities": ["v", "w", "curl_v"],
    "points": [[-3.0, 0.5, 0.2], [1.0, 1.0, 0.0], [0.0, 2.0, 0.0], [4.0, -1.0, 2.0]],
    "selfcheck": {"cases": [[1.0, 2.0], [0.5, 5.0], [2.0, 1.0]], "n_samples": 100000},
    "conv": {"windows": [[5.0, 50.0], [10.0, 100.0]], "n_radii": 5},
    "residual": {"n_points": 20, "time": 0.0},
}


def _number(path, v, positive=False, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(path, f"must be positive, got {v!r}")
    return int(v) if integer else float(v)


def _vector(path, v):
    if not isinstance(v, (list, tuple)) or len(v) != 3:
        raise ConfigError(path, "expected a list of 3 numbers")
    return [_number(f"{path}[{i}]", c) for i, c in enumerate(v)]


def load_config(path=None):
    """Read and validate a JSON configuration; missing optional sections take defaults."""
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "expected an object")
    cfg = json.loads(json.dumps(DEFAULTS))
    for key, val in raw.items():
        if key not in cfg and key not in ("params", "output_dir"):
            raise ConfigError(key, "unknown field")
        cfg[key] = val
    if path is not None and "params" not in raw:
        raise ConfigError("params", "required field missing")
    prm = cfg.get("params", {"lambda": 1.0, "period": 2.0 * np.pi})
    if not isinstance(prm, dict):
        raise ConfigError("params", "expected an object")
    for k in ("lambda", "period"):
        if k not in prm:
            raise ConfigError(f"params.{k}", "required field missing")
    cfg["params"] = {"lambda": _number("params.lambda", prm["lambda"], True), "period": _number("params.period", prm["period"], True)}
    fo = cfg["forcing"]
    if not isinstance(fo, dict) or "amplitudes" not in fo:
        raise ConfigError("forcing.amplitudes", "required field missing")
    amps = {}
    for k, v in fo["amplitudes"].items():
        p = f"forcing.amplitudes.{k}"
        try:
            kk = int(k)
        except ValueError:
            raise ConfigError(p, "mode index must be an integer") from None
        if isinstance(v, (list, tuple)):
            if len(v) != 2:
                raise ConfigError(p, "complex amplitudes are [re, im]")
            amps[kk] = complex(_number(p + "[0]", v[0]), _number(p + "[1]", v[1]))
        else:
            amps[kk] = _number(p, v)
    fo["amplitudes"] = amps
    fo["center"] = _vector("forcing.center", fo.get("center", [0.0, 0.0, 0.0]))
    fo["radius"] = _number("forcing.radius", fo.get("radius", 1.0), True)
    gr = cfg["grid"]
    gr["n"] = _number("grid.n", gr.get("n", 64), True, True)
    if gr["n"] % 2:
        raise ConfigError("grid.n", "must be even")
    gr["half_length"] = _number("grid.half_length", gr.get("half_length", 8.0), True)
    cfg["K_max"] = _number("K_max", cfg["K_max"], True, True)
    if not isinstance(cfg["quadrature"], dict):
        raise ConfigError("quadrature", "expected an object")
    known = set(QuadratureSpec.__dataclass_fields__)
    for k in cfg["quadrature"]:
        if k not in known:
            raise ConfigError(f"quadrature.{k}", "unknown field")
    rays = []
    for i, r in enumerate(cfg["rays"]):
        p = f"rays[{i}]"
        if "radii" not in r:
            raise ConfigError(p + ".radii", "required field missing")
        radii = tuple(_number(f"{p}.radii[{j}]", v, True) for j, v in enumerate(r["radii"]))
        try:
            rays.append(RaySpec(radii, theta=r.get("theta"), sigma=r.get("sigma"), azimuth=float(r.get("azimuth", 0.0))))
        except ValueError as exc:
            raise ConfigError(p, str(exc)) from None
    cfg["_rays"] = rays
    for q, w in cfg["windows"].items():
        if not isinstance(w, (list, tuple)) or len(w) != 2:
            raise ConfigError(f"windows.{q}", "expected [rmin, rmax]")
    cfg["points"] = [_vector(f"points[{i}]", v) for i, v in enumerate(cfg["points"])]
    return cfg


def _objects(cfg):
    params = FlowParams(cfg["params"]["lambda"], cfg["params"]["period"])
    fo = cfg["forcing"]
    try:
        f = ForcingSpec(fo["amplitudes"], fo["center"], fo["radius"])
    except ValueError as exc:
        raise ConfigError("forcing", str(exc)) from None
    grid = Grid(cfg["grid"]["n"], cfg["grid"]["half_length"])
    spec = QuadratureSpec(**cfg["quadrature"])
    return params, f, grid, spec


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path, obj):
    text = json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text)
    return text


def write_csv(path, header, rows):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    Path(path).write_text(buf.getvalue())


# --- verbs -----------------------------------------------------------------------------


def cmd_kernel_eval(cfg, out, seed):
    params, _, _, _ = _objects(cfg)
    pts = np.array(cfg["points"])
    eta = params.mode_frequency(1)
    rows = []
    for x in pts:
        g0 = gamma0(x, params)
        gh = complex(gamma_H(x, eta, params))
        pp, cert = phi_perp(0.0, x, params)
        rows.append([*x, float(wake(x)), float(phi0(x, params)), *g0.ravel(), gh.real, gh.imag, float(pp), float(np.max(cert.tail_bound))])
    header = ["x1", "x2", "x3", "s", "phi0"] + [f"gamma0_{i}{j}" for i in range(1, 4) for j in range(1, 4)] + ["gammaH1_re", "gammaH1_im", "phi_perp_t0", "phi_perp_tail"]
    write_csv(out / "kernels.csv", header, rows)
    return 0


def cmd_kernel_verify(cfg, out, seed):
    params, _, _, _ = _objects(cfg)
    bounds = verify_gamma0_bounds(params, n=2000, seed=seed)
    mult = []
    for alpha in (0, 1):
        for r in (1.0, 2.0, 4.0):
            mult.append(multiplier_diag(alpha, np.array([-r, 0.0, 0.0]), 0.25, params).to_dict())
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(40, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    x = d * np.exp(rng.uniform(0.0, np.log(10.0), 40))[:, None]
    trunc = []
    for xi in x:
        a, cert = phi_perp(0.3, xi, params, tol=1e-6)
        b, _ = phi_perp(0.3, xi, params, K=2 * cert.K_used)
        bound = float(perp_tail_bound(np.linalg.norm(xi), cert.K_used, params))
        trunc.append({"x": xi, "K": cert.K_used, "difference": abs(float(a - b)), "bound": bound, "ok": abs(float(a - b)) <= bound})
    rep = {"gamma0_bounds": bounds.to_dict(), "multiplier": mult, "truncation": trunc, "truncation_violations": sum(not t["ok"] for t in trunc)}
    write_json(out / "kernel_verify.json", rep)
    return 0 if rep["truncation_violations"] == 0 else 1


def cmd_conv_verify(cfg, out, seed):
    params, _, _, _ = _objects(cfg)
    c = cfg["conv"]
    windows = [np.geomspace(a, b, c["n_radii"]) for a, b in c["windows"]]
    runs = {
        "farwig_A3_B1": lambda r: verify_farwig(3.0, 1.0, 0, params, r),
        "farwig_A3.5_B0_grad": lambda r: verify_farwig(3.5, 0.0, 1, params, r),
        "conv_exp": lambda r: verify_conv_exp(2.5, 4.5, 0.5, r),
        "wake_conv": lambda r: verify_wake_conv(2.5, 1.0, r),
    }
    rep = {}
    for name, fn in runs.items():
        sups = [fn(r) for r in windows]
        change = abs(sups[1].sup_ratio - sups[0].sup_ratio) / abs(sups[0].sup_ratio)
        rep[name] = {"windows": c["windows"], "sup_ratio": [s.sup_ratio for s in sups], "relative_change": change, "stable": change < 0.10, "in_hypothesis": sups[0].in_hypothesis}
    write_json(out / "conv_verify.json", rep)
    return 0


def _solve(cfg, nonlinear):
    params, f, grid, spec = _objects(cfg)
    if nonlinear:
        fld, hist = picard_solve(f, params, grid, K_max=cfg["K_max"])
        return params, f, grid, spec, fld, {"history": hist, **fld.meta}
    fld = solve_linear(f, params, grid, cfg["K_max"], method="freespace")
    return params, f, grid, spec, fld, dict(fld.meta)


def cmd_solve(cfg, out, seed, which):
    params, f, grid, spec, fld, meta = _solve(cfg, which == "nonlinear")
    dump_field(fld, out / f"field_{which}.tposn", params)
    write_json(out / f"solve_{which}.json", {"meta": meta, "grid": {"n": grid.n, "half_length": grid.half_length}, "K_max": fld.K_max})
    return 0


def cmd_decay_fit(cfg, out, seed):
    params, f, grid, spec, fld, meta = _solve(cfg, True)
    table = sample_quantities(fld, f, params, cfg["_rays"], spec, quantities=tuple(cfg["quantities"]))
    table.to_csv(out / "samples.csv")
    fits = []
    for ray in cfg["_rays"]:
        for q in cfg["quantities"]:
            try:
                rep = fit_decay(table, q, cfg["windows"].get(q), ray.kind, ray.param)
                fits.append({"ray": {"kind": ray.kind, "param": ray.param}, **rep.to_dict()})
            except ValueError as exc:
                fits.append({"ray": {"kind": ray.kind, "param": ray.param}, "quantity": q, "error": str(exc)})
    S = 2.0 * (float(np.linalg.norm(f.center)) + f.radius)
    norms = weighted_norms(table, S, 0.1, params=params)
    write_json(out / "decay_fit.json", {"fits": fits, "weighted_norms": norms.to_dict(), "solver": meta})
    return 0


def cmd_fixedpoint(cfg, out, seed):
    params, f, grid, spec, fld, meta = _solve(cfg, True)
    cut = CutoffSpec.for_forcing(f)
    pts = residual_points(cut, cfg["residual"]["n_points"], seed=seed)
    rows = fixed_point_residual(fld, f, cut, pts, params, cfg["residual"]["time"], spec)
    failed = sum(not r.passed() for r in rows)
    write_json(out / "fixedpoint_residual.json", {"S": cut.S, "rows": [r.to_dict() for r in rows], "failed": failed})
    return 0 if failed == 0 else 1


def cmd_selfcheck(cfg, out, seed):
    c = cfg["selfcheck"]
    rows, reps = [], []
    for a, S in c["cases"]:
        rep = verify_exp_shift(a, S, c["n_samples"], seed=seed)
        reps.append(rep.to_dict())
        rows.append([a, S, rep.n_samples, rep.violations, rep.worst_margin_wake, rep.worst_margin_abs])
    write_csv(out / "selfcheck.csv", ["a", "S", "n_samples", "violations", "worst_margin_wake", "worst_margin_abs"], rows)
    ok = all(r["passed"] for r in reps)
    write_json(out / "selfcheck.json", {"seed": seed, "cases": reps, "passed": ok})
    return 0 if ok else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="tposeen", description="Time-periodic Oseen kernels, solver and decay harness.")
    ap.add_argument("--config", type=Path, default=None, help="JSON configuration file")
    ap.add_argument("--seed", type=int, default=0, help="seed of all sampled point sets")
    ap.add_argument("--out", type=Path, default=None, help="output directory (default: config output_dir or ./out)")
    sub = ap.add_subparsers(dest="verb", required=True)
    k = sub.add_parser("kernel").add_subparsers(dest="action", required=True)
    k.add_parser("eval")
    k.add_parser("verify")
    sub.add_parser("conv").add_subparsers(dest="action", required=True).add_parser("verify")
    s = sub.add_parser("solve").add_subparsers(dest="action", required=True)
    s.add_parser("linear")
    s.add_parser("nonlinear")
    sub.add_parser("decay").add_subparsers(dest="action", required=True).add_parser("fit")
    sub.add_parser("fixedpoint").add_subparsers(dest="action", required=True).add_parser("residual")
    sub.add_parser("selfcheck")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = args.out or Path(cfg.get("output_dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    threads = int(os.environ.get("TPOSEEN_THREADS", "1"))
    handlers = {
        ("kernel", "eval"): cmd_kernel_eval,
        ("kernel", "verify"): cmd_kernel_verify,
        ("conv", "verify"): cmd_conv_verify,
        ("solve", "linear"): lambda c, o, s: cmd_solve(c, o, s, "linear"),
        ("solve", "nonlinear"): lambda c, o, s: cmd_solve(c, o, s, "nonlinear"),
        ("decay", "fit"): cmd_decay_fit,
        ("fixedpoint", "residual"): cmd_fixedpoint,
        ("selfcheck", None): cmd_selfcheck,
    }
    try:
        with sfft.set_workers(threads):
            return handlers[(args.verb, getattr(args, "action", None))](cfg, out, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
