"""Output MSE and utilization gain against activation sparsity, with and without reordering.

    python scripts/mse_vs_sparsity.py --threads 2 --out out/sparsity.csv
"""

import argparse
import csv
from pathlib import Path

from sysmt.experiment import WorkloadParams, sweep_sparsity
from sysmt.pe_core import Strategy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, choices=(2, 4), default=2)
    ap.add_argument("--strategy", default="S+A")
    ap.add_argument("--K", type=int, default=256)
    ap.add_argument("--M", type=int, default=64)
    ap.add_argument("--N", type=int, default=32)
    ap.add_argument("--fits4-share", type=float, default=0.3, help="narrow share of the non-zero activations")
    ap.add_argument("--correlation", type=float, default=0.7)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/mse_vs_sparsity.csv")
    args = ap.parse_args()

    base = WorkloadParams(args.K, args.M, args.N, 0.5, 0.5 * args.fits4_share, args.correlation)
    sparsities = [round(0.1 * i, 1) for i in range(1, 10)]
    rows = sweep_sparsity(base, sparsities, args.threads, Strategy.parse(args.strategy), args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(f"{'p_zero':>6} {'gain':>7} {'gain_re':>7} {'model':>7} {'mse':>10} {'mse_re':>10}")
    for r in rows:
        print(f"{r['p_zero']:6.1f} {r['util_gain']:7.3f} {r['util_gain_reorder']:7.3f} {r['util_gain_model']:7.3f} "
              f"{r['mse']:10.3e} {r['mse_reorder']:10.3e}")
    print(f"-> {out}")


if __name__ == "__main__":
    main()
