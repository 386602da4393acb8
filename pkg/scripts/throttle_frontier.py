"""Speedup against total MSE as the worst layers of a 4-thread network fall back to 2 threads.

    python scripts/throttle_frontier.py --layers 8 --out out/throttle.csv
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from sysmt.experiment import WorkloadParams, derive_seed, throttle_frontier
from sysmt.pe_core import Strategy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--layers", type=int, default=8)
    ap.add_argument("--strategy", default="S+A")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/throttle_frontier.csv")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    layers = []
    for i in range(args.layers):
        # multiples of 16 keep every layer's cycles proportional to its MACs
        M, N = 16 * int(rng.integers(1, 5)), 16 * int(rng.integers(1, 5))
        K = 16 * int(rng.integers(2, 17))
        p_zero = float(rng.uniform(0.2, 0.7))
        params = WorkloadParams(K, M, N, p_zero, float(rng.uniform(0, 0.5)) * (1 - p_zero), 0.5)
        layers.append(params.generate(derive_seed(args.seed, i)))
    points = throttle_frontier(layers, Strategy.parse(args.strategy))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["count", "slowed", "speedup", "speedup_exact", "total_mse"])
        for p in points:
            w.writerow([p.count, " ".join(map(str, p.slowed)), float(p.speedup), str(p.speedup), p.total_mse])
            print(f"{p.count:2d} layers at 2T  speedup {float(p.speedup):.3f}  total MSE {p.total_mse:.4e}")
    print(f"-> {out}")


if __name__ == "__main__":
    main()
