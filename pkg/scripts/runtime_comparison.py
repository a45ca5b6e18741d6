"""Wall time of the full vertex walk against single LP solves on a Q=100 instance.

    python scripts/runtime_comparison.py [--config configs/q100_uniform.json] [--repeats 5]
"""
import argparse
import os
import time

import numpy as np

from dptradeoff.cli import load_config
from dptradeoff.lp_oracle import lp_optimal_delay
from dptradeoff.model import SystemModel
from dptradeoff.vertex_walk import trace_curve

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=os.path.join(ROOT, "configs", "q100_uniform.json"))
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    cfg = load_config(args.config)
    model = SystemModel.from_lists(cfg["Q"], cfg["arrival"], cfg["power"])
    trace_curve(model)  # compile and cache the numba kernels
    curve = trace_curve(model)
    walk = best_of(lambda: trace_curve(model), args.repeats)
    lo, hi = curve.vertices[-1].power, curve.vertices[0].power
    print(f"full curve: {len(curve)} vertices in {walk:.3f}s")
    print("budget,lp_seconds")
    total = 0.0
    for pth in np.linspace(lo, hi, 7)[1:-1]:
        dt = best_of(lambda: lp_optimal_delay(model, pth), args.repeats)
        total += dt
        print(f"{float(pth)!r},{dt:.4f}")
    # budgets near the minimum power need many more pivots
    for frac in (1e-3, 1e-2):
        pth = lo + frac * (hi - lo)
        print(f"{float(pth)!r},{best_of(lambda: lp_optimal_delay(model, pth), args.repeats):.4f}")
    print(f"5 evenly spaced LP solves: {total:.3f}s; walk/LP ratio {walk / total:.2f}")
