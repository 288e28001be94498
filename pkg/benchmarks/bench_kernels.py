"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Prints the best wall time per backend and the largest relative
difference between them.
"""

import argparse
import time

import numpy as np

from tposeen import _backend
from tposeen.harness import _periods_needed, _time_rule
from tposeen.special import FlowParams


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(seed=0):
    rng = np.random.default_rng(seed)
    p = FlowParams()
    z = rng.normal(size=(400, 3))
    z *= np.exp(rng.uniform(np.log(0.05), np.log(100.0), 400))[:, None] / np.linalg.norm(z, axis=1, keepdims=True)
    tn, tw = _time_rule(p.period, 48, 10)
    mm = _periods_needed(np.linalg.norm(z, axis=1), p.lam, p.period)
    u = rng.uniform(0.0, 30.0, 200_000)
    return {
        "heat_grad_l1 (400 points)": lambda k: k.heat_grad_l1(z, p.lam, p.period, tn, tw, mm),
        "ein_series (2e5 values)": lambda k: k.ein_series(u),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    names = sorted(_backend.BACKENDS)
    if len(names) == 1:
        print("compiled extension not built; only the numpy backend is available")
    for label, fn in cases().items():
        res = {n: best_time(lambda: fn(_backend.get(n)), args.repeat) for n in names}
        line = "  ".join(f"{n} {res[n][0] * 1e3:9.2f} ms" for n in names)
        if len(names) > 1:
            a, b = res["cython"][1], res["python"][1]
            # values far outside the wake cancel to ~1e-45, so scale by the largest
            diff = np.max(np.abs(a - b)) / np.max(np.abs(b))
            line += f"  speedup {res['python'][0] / res['cython'][0]:5.1f}x  max diff/max {diff:.1e}"
        print(f"{label:28s} {line}")


if __name__ == "__main__":
    main()
