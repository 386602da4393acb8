"""Mean MSE per exploitation strategy over a batch of synthetic layers, at 2 and 4 threads.

    python scripts/strategy_table.py --layers 20
"""

import argparse

import numpy as np

from sysmt.experiment import WorkloadParams, derive_seed, run_layer
from sysmt.pe_core import ALL_STRATEGIES
from sysmt.systolic import GridConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--layers", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    params = []
    for _ in range(args.layers):
        p_zero = float(rng.uniform(0.2, 0.7))
        params.append(WorkloadParams(128, 64, 32, p_zero, float(rng.uniform(0, 0.5)) * (1 - p_zero), 0.5))
    tiles = [p.generate(derive_seed(args.seed, i)) for i, p in enumerate(params)]
    print(f"{'strategy':>8} {'mse 2T':>11} {'mse 4T':>11}")
    for st in ALL_STRATEGIES:
        cells = []
        for T in (2, 4):
            mses = [run_layer(X, W, GridConfig(threads=T, strategy=st)).mse for X, W in tiles]
            cells.append(np.mean(mses))
        print(f"{str(st):>8} {cells[0]:11.4e} {cells[1]:11.4e}")


if __name__ == "__main__":
    main()
