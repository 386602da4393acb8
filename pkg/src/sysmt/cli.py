"""Command-line driver: ``sysmt {simulate,verify,sweep,reorder-stats}``.

Exit codes: 0 ok, 1 verification failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from sysmt import experiment, reorder, tileio, verify
from sysmt.experiment import ConfigError, ExperimentConfig, WorkloadParams
from sysmt.pe_core import ALL_STRATEGIES, Strategy

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _parse_gen(text: str) -> WorkloadParams:
    parts = text.split(",")
    if not 5 <= len(parts) <= 7:
        raise UsageError(f"--gen expects K,M,N,p_zero,p_fits4[,correlation[,w_zero]], got {text!r}")
    try:
        K, M, N = (int(p) for p in parts[:3])
        rest = [float(p) for p in parts[3:]]
    except ValueError:
        raise UsageError(f"bad --gen value {text!r}") from None
    return WorkloadParams(K, M, N, *rest)


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        r, c = text.lower().split("x")
        return int(r), int(c)
    except ValueError:
        raise UsageError(f"--grid expects ROWSxCOLS, got {text!r}") from None


def _add_workload_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config (JSON); flags below override it")
    p.add_argument("--x", help="activation tile (.qtile or .csv)")
    p.add_argument("--w", help="weight tile (.qtile or .csv)")
    p.add_argument("--gen", action="append", metavar="K,M,N,PZ,PF4[,CORR[,WZ]]",
                   help="generate a synthetic layer; repeat for several layers")
    p.add_argument("--threads", type=int, choices=(1, 2, 4))
    p.add_argument("--strategy", help="e.g. S+A, S+Aw, W, none")
    p.add_argument("--reorder", action="store_true", default=None, help="statistics-driven column reordering")
    p.add_argument("--grid", help="PE grid, e.g. 16x16")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--unsigned-weights", action="store_true", default=None,
                   help="treat weights as unsigned 8-bit patterns (worked examples only)")
    p.add_argument("--layer-threads", action="append", metavar="LAYER=T", help="per-layer thread override")
    p.add_argument("--power-table", help="JSON power table")
    p.add_argument("--engine", choices=("vector", "cycle"))


def build_config(args) -> ExperimentConfig:
    if args.config and not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.x or args.w:
        if not (args.x and args.w):
            raise UsageError("--x and --w go together")
        changes.update(tiles=[[args.x, args.w]], generate=[])
    if args.gen:
        changes.update(generate=[_parse_gen(g) for g in args.gen], tiles=[])
    if args.grid:
        changes["rows"], changes["cols"] = _parse_grid(args.grid)
    for name in ("threads", "strategy", "reorder", "seed", "power_table", "engine", "unsigned_weights"):
        v = getattr(args, name, None)
        if v is not None:
            changes[name] = v
    if args.out:
        changes["out_dir"] = args.out
    if args.layer_threads:
        lt = dict(cfg.layer_threads)
        for item in args.layer_threads:
            k, _, v = item.partition("=")
            if not v.isdigit():
                raise UsageError(f"--layer-threads expects LAYER=T, got {item!r}")
            lt[k] = int(v)
        changes["layer_threads"] = lt
    if getattr(args, "trace", None):
        changes["trace"] = True
    cfg = replace(cfg, **changes)
    for pair in cfg.tiles:
        for path in pair:
            if not Path(path).is_file():
                raise UsageError(f"input file not found: {path}")
    return cfg.validate()


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_simulate(args) -> int:
    cfg = build_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report, results = experiment.run_experiment(cfg)
    (out / "config.json").write_text(cfg.to_json())
    _dump_json(out / "report.json", report)
    flat = []
    for i, layer in enumerate(report["layers"]):
        row = {"layer": i}
        row.update({k: v for k, v in layer.items() if not isinstance(v, (dict, list)) and v is not None})
        row.update({f"outcome_{k}": v for k, v in layer["outcomes"].items()})
        flat.append(row)
    _write_csv(out / "layers.csv", flat)
    if cfg.trace:
        rows = []
        for i, r in enumerate(results):
            if r.trace.events is None:
                raise UsageError("--trace needs --engine cycle")
            for cyc, m, n, j, mode, products in r.trace.events:
                rows.append({"layer": i, "cycle": cyc, "row": m, "col": n, "step": j, "mode": mode,
                             "lane_products": " ".join(map(str, products)), "psum_increment": sum(products)})
        _write_csv(out / "trace.csv", rows)
    print(f"speedup steady {report['speedup_steady']:.4f} total {report['speedup_total']:.4f}  "
          f"mse {report['mse_total']:.6g}  energy ratio {report['energy_ratio']:.4f}  -> {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify.run_all()
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.ok for r in results) else EXIT_VERIFY


def _floats(values, default):
    return [float(v) for v in values] if values else default


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not cfg.generate:
        raise UsageError("sweeps need generated workloads (--gen or 'generate' in the config)")
    strategy = Strategy.parse(cfg.strategy)
    dims = (cfg.rows, cfg.cols)
    if args.axis == "sparsity":
        values = _floats(args.values, [round(0.1 * i, 1) for i in range(1, 10)])
        rows = experiment.sweep_sparsity(cfg.generate[0], values, cfg.threads, strategy, cfg.seed, dims,
                                         cfg.reorder_samples)
    elif args.axis == "strategy":
        strategies = [Strategy.parse(s) for s in args.values] if args.values else list(ALL_STRATEGIES)
        rows = experiment.sweep_strategy(cfg.generate[0], strategies, cfg.threads, cfg.seed, dims)
    elif args.axis == "threads":
        rows = experiment.sweep_threads(cfg.generate[0], strategy, cfg.seed, dims, cfg.power())
    else:
        rows = experiment.sweep_throttle(cfg.generate, strategy, cfg.seed, dims)
    (out / "config.json").write_text(cfg.to_json())
    path = out / f"sweep_{args.axis}.csv"
    _write_csv(path, rows)
    print(f"{len(rows)} points -> {path}")
    return EXIT_OK


def cmd_reorder_stats(args) -> int:
    if args.samples:
        missing = [p for p in args.samples if not Path(p).is_file()]
        if missing:
            raise UsageError(f"input file not found: {missing[0]}")
        samples = [tileio.load(p, "act") for p in args.samples]
    elif args.gen:
        g = _parse_gen(args.gen)
        seed = args.seed or 0
        from sysmt.lowering import calibration_samples
        samples = calibration_samples(g.K, g.M, g.p_zero, g.p_fits4, g.correlation, seed, args.n_samples)
    else:
        raise UsageError("give --samples or --gen")
    stats = reorder.gather_stats(samples)
    weights = reorder.ScoreWeights(*args.weights) if args.weights else reorder.ScoreWeights()
    perm = reorder.compute_permutation(stats, args.threads, weights)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "column_stats.csv", stats.to_rows())
    reorder.save_permutation(perm, out / "permutation.json")
    ident = np.arange(stats.K)
    print(f"K={stats.K} samples={stats.sample_count} expected collisions/row: "
          f"identity {reorder.expected_collisions(stats, ident, args.threads):.3f} "
          f"reordered {reorder.expected_collisions(stats, perm, args.threads):.3f} -> {out}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sysmt", description="Bit-exact NB-SMT systolic array simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one workload against the 1-thread baseline")
    _add_workload_args(p)
    p.add_argument("--trace", action="store_true", help="write per-PE lane products (needs --engine cycle)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="exhaustive multiplier, rounding and lowering oracles")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="emit CSV point sets along one axis")
    _add_workload_args(p)
    p.add_argument("--axis", required=True, choices=("sparsity", "strategy", "threads", "throttle_count"))
    p.add_argument("--values", nargs="*", help="axis values (sparsities or strategy names)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reorder-stats", help="column statistics and permutation for a layer")
    p.add_argument("--samples", nargs="*", help="activation sample tiles")
    p.add_argument("--gen", help="K,M,N,p_zero,p_fits4[,correlation]")
    p.add_argument("--n-samples", type=int, default=4)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, choices=(2, 4), default=2)
    p.add_argument("--weights", type=float, nargs=3, metavar=("WIDE", "FITS4", "ZERO"),
                   help="column score weights")
    p.add_argument("--out")
    p.set_defaults(func=cmd_reorder_stats)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, ConfigError, tileio.TileFormatError, FileNotFoundError) as e:
        print(f"sysmt: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
