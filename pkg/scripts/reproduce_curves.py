"""Curve, LP and simulation tables for every bundled Q=100 configuration.

Writes <name>_curve.csv, <name>_lp.csv, <name>_sim.csv and <name>_check.txt
per config into the output directory, then prints the minimum-delay vertex
and the validation verdict of each curve.

    python scripts/reproduce_curves.py [--out results] [--horizon 1000000]
"""
import argparse
import glob
import os
import sys

from dptradeoff.cli import main as cli

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def run(argv):
    code = cli(argv)
    if code not in (0, 1):
        sys.exit(code)
    return code


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=os.path.join(ROOT, "results"))
    ap.add_argument("--horizon", type=int, default=10**6)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    for path in sorted(glob.glob(os.path.join(ROOT, "configs", "q100_*.json"))):
        name = os.path.splitext(os.path.basename(path))[0]
        base = os.path.join(args.out, name)
        run(["curve", "--config", path, "--out", base + "_curve.csv"])
        run(["lp", "--config", path, "--out", base + "_lp.csv"])
        sim = ["--seed", str(args.seed), "--horizon", str(args.horizon)]
        run(["simulate", "--config", path, "--out", base + "_sim.csv"] + sim)
        code = run(["validate", "--config", path, "--out", base + "_check.txt"] + sim)
        with open(base + "_curve.csv") as fh:
            rows = fh.read().splitlines()
        first = rows[1].split(",")
        print(f"{name}: {len(rows) - 1} vertices, min-delay vertex power {first[1]} delay {first[2]}, "
              f"validate {'PASS' if code == 0 else 'FAIL'}")
