"""Monte-Carlo utilization gain of 2 and 4 threads vs the independent-thread model.

Activations are zero with probability s, otherwise uniform on [1, 255];
weights are never zero, so s is exactly the single-thread idle fraction.

    python scripts/util_gain.py --out out/util_gain.csv
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from sysmt.lowering import act_tile, wgt_tile
from sysmt.metrics import measured_util_gain, util_gain_model
from sysmt.systolic import GridConfig, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--M", type=int, default=4096)
    ap.add_argument("--K", type=int, default=1024)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/util_gain.csv")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    W = wgt_tile(rng.integers(1, 128, size=(args.K, 1)))
    rows = []
    for s in [round(0.1 * i, 1) for i in range(1, 10)]:
        x = rng.integers(1, 256, size=(args.M, args.K))
        x[rng.random(x.shape) < s] = 0
        X = act_tile(x)
        _, base = simulate(X, W, GridConfig(threads=1))
        for T in (2, 4):
            _, tr = simulate(X, W, GridConfig(threads=T))
            rows.append({"s": s, "threads": T, "pe_cycles": tr.pe_steps,
                         "gain": measured_util_gain(base, tr), "model": util_gain_model(s, T)})
            print(f"s={s:.1f} T={T} gain={rows[-1]['gain']:.4f} model={rows[-1]['model']:.4f}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(f"-> {out}")


if __name__ == "__main__":
    main()
