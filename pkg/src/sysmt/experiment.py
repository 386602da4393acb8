"""Experiment configuration, per-layer runs, reports and parameter sweeps.

All randomness derives from ``ExperimentConfig.seed``; identical configs give
byte-identical reports.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from sysmt import metrics, reorder, tileio
from sysmt.lowering import QTile, calibration_samples, dequantize_output, gen_synthetic
from sysmt.pe_core import Strategy
from sysmt.systolic import GridConfig, reference_matmul, simulate


class ConfigError(ValueError):
    pass


def derive_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


@dataclass(frozen=True)
class WorkloadParams:
    K: int
    M: int
    N: int
    p_zero: float
    p_fits4: float
    correlation: float = 0.0
    w_zero: float = 0.0
    w_spread: float = 24.0

    def generate(self, seed: int) -> tuple[QTile, QTile]:
        return gen_synthetic(self.K, self.M, self.N, self.p_zero, self.p_fits4, self.correlation,
                             seed=seed, w_zero=self.w_zero, w_spread=self.w_spread)


@dataclass
class ExperimentConfig:
    generate: list[WorkloadParams] = field(default_factory=list)
    tiles: list[list[str]] = field(default_factory=list)  # [[x_path, w_path], ...]
    rows: int = 16
    cols: int = 16
    threads: int = 2
    strategy: str = "S+A"
    reorder: bool = False
    reorder_samples: int = 4
    layer_threads: dict[str, int] = field(default_factory=dict)  # layer index -> T override
    power_table: Optional[str] = None
    seed: int = 0
    out_dir: str = "out"
    unsigned_weights: bool = False
    engine: str = "vector"
    trace: bool = False

    def validate(self) -> "ExperimentConfig":
        if bool(self.generate) == bool(self.tiles):
            raise ConfigError("give exactly one workload source: 'generate' or 'tiles'")
        try:
            Strategy.parse(self.strategy)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        for T in [self.threads, *self.layer_threads.values()]:
            if T not in (1, 2, 4):
                raise ConfigError(f"threads must be 1, 2 or 4, got {T}")
        n_layers = len(self.generate) or len(self.tiles)
        for k in self.layer_threads:
            if not (str(k).isdigit() and int(k) < n_layers):
                raise ConfigError(f"layer_threads key {k!r} is not a layer index < {n_layers}")
        for pair in self.tiles:
            if len(pair) != 2:
                raise ConfigError("each tiles entry is [x_path, w_path]")
        for g in self.generate:
            if g.p_zero < 0 or g.p_fits4 < 0 or g.p_zero + g.p_fits4 > 1 + 1e-12:
                raise ConfigError(f"bad generator probabilities in {g}")
            if min(g.K, g.M, g.N) < 1:
                raise ConfigError(f"bad generator dims in {g}")
        if self.engine not in ("vector", "cycle"):
            raise ConfigError(f"unknown engine {self.engine!r}")
        if self.rows < 1 or self.cols < 1 or self.reorder_samples < 1:
            raise ConfigError("rows, cols and reorder_samples must be positive")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            d["generate"] = [WorkloadParams(**g) for g in d.get("generate", [])]
        except TypeError as e:
            raise ConfigError(f"bad generator entry: {e}") from None
        d["layer_threads"] = {str(k): int(v) for k, v in d.get("layer_threads", {}).items()}
        return cls(**d).validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None

    def grid(self, threads: Optional[int] = None) -> GridConfig:
        return GridConfig(self.rows, self.cols, self.threads if threads is None else threads,
                          Strategy.parse(self.strategy), signed_weights=not self.unsigned_weights)

    def threads_for(self, layer: int) -> int:
        return self.layer_threads.get(str(layer), self.threads)

    def power(self) -> metrics.PowerTable:
        if self.power_table is None:
            return metrics.PowerTable()
        return metrics.PowerTable.from_json(json.loads(Path(self.power_table).read_text()))


@dataclass
class LayerResult:
    threads: int
    strategy: str
    macs: int
    cycles_total: int
    cycles_steady: int
    baseline_cycles_total: int
    baseline_cycles_steady: int
    outcomes: dict
    utilization: float
    baseline_utilization: float
    rounded_sites: int
    mse: float
    mse_levels: float
    max_abs_err: int
    breakdown: dict
    permutation: Optional[list] = None
    trace: object = field(default=None, repr=False, compare=False)
    output: object = field(default=None, repr=False, compare=False)

    @property
    def sparsity(self) -> float:
        """PE-level baseline idleness; the ``s`` of the utilization-gain model."""
        return 1.0 - self.baseline_utilization

    @property
    def util_gain(self) -> float:
        return self.utilization / self.baseline_utilization if self.baseline_utilization else float("nan")

    @property
    def speedup_steady(self) -> float:
        return self.baseline_cycles_steady / self.cycles_steady

    @property
    def speedup_total(self) -> float:
        return self.baseline_cycles_total / self.cycles_total

    def as_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("trace", "output")}
        d.update(sparsity=self.sparsity, util_gain=self.util_gain,
                 util_gain_model=metrics.util_gain_model(self.sparsity, self.threads),
                 speedup_steady=self.speedup_steady, speedup_total=self.speedup_total)
        return d


def run_layer(X: QTile, W: QTile, grid: GridConfig, perm=None, engine: str = "vector") -> LayerResult:
    """Simulate one layer at ``grid.threads`` plus the single-thread baseline."""
    O_ref = reference_matmul(X, W)
    Xs, Ws = (X, W) if perm is None else reorder.apply_permutation(X, W, perm)
    O, trace = simulate(Xs, Ws, grid, engine=engine)
    base_grid = replace(grid, threads=1)
    if grid.threads == 1:
        base = trace
    else:
        O_base, base = simulate(X, W, base_grid, engine="vector")
        assert np.array_equal(O_base, O_ref)
    err = O - O_ref
    return LayerResult(
        threads=grid.threads,
        strategy=str(grid.strategy),
        macs=int(X.shape[0] * X.shape[1] * W.shape[1]),
        cycles_total=trace.cycles_total,
        cycles_steady=trace.cycles_steady,
        baseline_cycles_total=base.cycles_total,
        baseline_cycles_steady=base.cycles_steady,
        outcomes=trace.counts(),
        utilization=trace.utilized_fraction,
        baseline_utilization=base.utilized_fraction,
        rounded_sites=int(trace.rounded_sites.sum()),
        mse=metrics.mse(dequantize_output(O, X, W), dequantize_output(O_ref, X, W)),
        mse_levels=metrics.mse(O, O_ref),
        max_abs_err=int(np.abs(err).max()) if err.size else 0,
        breakdown=metrics.util_breakdown(X, W, grid.signed_weights).as_dict(),
        permutation=None if perm is None else [int(p) for p in perm],
        trace=trace,
        output=O,
    )


def calibrate(params: WorkloadParams, T: int, n_samples: int, seed: int,
              weights: reorder.ScoreWeights = reorder.ScoreWeights()) -> np.ndarray:
    """Permutation from statistics over fresh sample tiles of the same distribution.

    Column types are a property of the layer, so samples share the layer's
    column-type draw and differ only in the per-element draws.
    """
    samples = calibration_samples(params.K, params.M, params.p_zero, params.p_fits4,
                                  params.correlation, seed, n_samples)
    return reorder.compute_permutation(reorder.gather_stats(samples), T, weights)


def load_layers(cfg: ExperimentConfig) -> list[tuple[QTile, QTile, Optional[WorkloadParams], int]]:
    out = []
    if cfg.generate:
        for i, g in enumerate(cfg.generate):
            s = derive_seed(cfg.seed, i)
            X, W = g.generate(s)
            out.append((X, W, g, s))
    else:
        for i, (xp, wp) in enumerate(cfg.tiles):
            out.append((tileio.load(xp, "act"), tileio.load(wp, "wgt"), None, derive_seed(cfg.seed, i)))
    return out


def run_experiment(cfg: ExperimentConfig) -> tuple[dict, list[LayerResult]]:
    cfg.validate()
    results = []
    for i, (X, W, params, s) in enumerate(load_layers(cfg)):
        grid = cfg.grid(cfg.threads_for(i))
        perm = None
        if cfg.reorder and grid.threads > 1:
            if params is not None:
                perm = calibrate(params, grid.threads, cfg.reorder_samples, s)
            else:
                perm = reorder.compute_permutation(reorder.gather_stats([X]), grid.threads)
        results.append(run_layer(X, W, grid, perm, engine=cfg.engine))
    power = cfg.power()
    e_smt = metrics.energy([metrics.LayerWork(r.macs, r.utilization, r.threads) for r in results], power)
    e_base = metrics.energy([metrics.LayerWork(r.macs, r.baseline_utilization, 1) for r in results], power)
    base_steady = sum(r.baseline_cycles_steady for r in results)
    smt_steady = sum(r.cycles_steady for r in results)
    base_total = sum(r.baseline_cycles_total for r in results)
    smt_total = sum(r.cycles_total for r in results)
    report = {
        "config": json.loads(cfg.to_json()),
        "layers": [r.as_dict() for r in results],
        "cycles_steady": smt_steady,
        "cycles_total": smt_total,
        "baseline_cycles_steady": base_steady,
        "baseline_cycles_total": base_total,
        "speedup_steady": base_steady / smt_steady,
        "speedup_total": base_total / smt_total,
        "mse_total": sum(r.mse for r in results),
        "energy_mj": e_smt.as_dict(),
        "baseline_energy_mj": e_base.as_dict(),
        "energy_ratio": e_smt.total_mj / e_base.total_mj if e_base.total_mj else float("nan"),
    }
    return report, results


# ---------------------------------------------------------------------------
# sweeps; each returns a list of flat dict rows for CSV emission


def sweep_sparsity(base: WorkloadParams, sparsities: Sequence[float], T: int, strategy: Strategy,
                   seed: int, grid_dims=(16, 16), reorder_samples: int = 4) -> list[dict]:
    """MSE and utilization gain vs activation sparsity, with and without reordering."""
    rows = []
    fits_share = base.p_fits4 / max(1 - base.p_zero, 1e-12)
    for i, s in enumerate(sparsities):
        p = replace(base, p_zero=s, p_fits4=(1 - s) * fits_share)
        ls = derive_seed(seed, i)
        X, W = p.generate(ls)
        grid = GridConfig(*grid_dims, threads=T, strategy=strategy)
        plain = run_layer(X, W, grid)
        perm = calibrate(p, T, reorder_samples, ls)
        ordered = run_layer(X, W, grid, perm)
        rows.append({
            "p_zero": s,
            "sparsity": plain.sparsity,
            "util_gain": plain.util_gain,
            "util_gain_reorder": ordered.util_gain,
            "util_gain_model": metrics.util_gain_model(plain.sparsity, T),
            "mse": plain.mse,
            "mse_reorder": ordered.mse,
        })
    return rows


def sweep_strategy(params: WorkloadParams, strategies: Sequence[Strategy], T: int, seed: int,
                   grid_dims=(16, 16)) -> list[dict]:
    X, W = params.generate(derive_seed(seed, 0))
    rows = []
    for st in strategies:
        r = run_layer(X, W, GridConfig(*grid_dims, threads=T, strategy=st))
        rows.append({"strategy": str(st), "mse": r.mse, "rounded_sites": r.rounded_sites,
                     "lossy_cycles": r.outcomes["squeeze_lossy"], "utilization": r.utilization})
    return rows


def sweep_threads(params: WorkloadParams, strategy: Strategy, seed: int, grid_dims=(16, 16),
                  power: metrics.PowerTable | None = None) -> list[dict]:
    X, W = params.generate(derive_seed(seed, 0))
    rows = []
    for T in (1, 2, 4):
        r = run_layer(X, W, GridConfig(*grid_dims, threads=T, strategy=strategy))
        e = metrics.energy([metrics.LayerWork(r.macs, r.utilization, T)], power)
        rows.append({"threads": T, "cycles_total": r.cycles_total, "cycles_steady": r.cycles_steady,
                     "speedup_total": r.speedup_total, "speedup_steady": r.speedup_steady,
                     "mse": r.mse, "utilization": r.utilization, "energy_mj": e.total_mj})
    return rows


@dataclass
class ThrottlePoint:
    count: int
    slowed: list[int]
    speedup: Fraction
    total_mse: float
    layer_mse: list[float]


def throttle_frontier(layers: Sequence[tuple[QTile, QTile]], strategy: Strategy, high: int = 4,
                      low: int = 2, grid_dims=(16, 16)) -> list[ThrottlePoint]:
    """Speedup/MSE trade as the highest-MSE layers drop from ``high`` to ``low`` threads.

    Speedup is the exact ratio of steady-state cycles summed over layers.
    """
    hi = [run_layer(X, W, GridConfig(*grid_dims, threads=high, strategy=strategy)) for X, W in layers]
    lo = [run_layer(X, W, GridConfig(*grid_dims, threads=low, strategy=strategy)) for X, W in layers]
    profile = [r.mse for r in hi]
    base = sum(r.baseline_cycles_steady for r in hi)
    points = []
    for count in range(len(layers) + 1):
        slowed = metrics.select_throttled_layers(profile, count)
        chosen = [lo[i] if i in slowed else hi[i] for i in range(len(layers))]
        cycles = sum(r.cycles_steady for r in chosen)
        lm = [r.mse for r in chosen]
        points.append(ThrottlePoint(count, slowed, Fraction(base, cycles), float(sum(lm)), lm))
    return points


def sweep_throttle(layer_params: Sequence[WorkloadParams], strategy: Strategy, seed: int,
                   grid_dims=(16, 16)) -> list[dict]:
    layers = [p.generate(derive_seed(seed, i)) for i, p in enumerate(layer_params)]
    return [
        {"count": p.count, "slowed": " ".join(map(str, p.slowed)), "speedup": float(p.speedup),
         "total_mse": p.total_mse}
        for p in throttle_frontier(layers, strategy, grid_dims=grid_dims)
    ]
