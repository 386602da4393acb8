"""Utilization, error, energy and per-layer throttling accounting."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from sysmt import qnum
from sysmt.lowering import QTile


class MacClass(enum.Enum):
    IDLE = "idle"
    PARTIAL = "partial"
    FULL = "full"


def classify_mac(x: int, w: int, signed_weights: bool = True) -> MacClass:
    if x == 0 or w == 0:
        return MacClass.IDLE
    if qnum.fits4(x, signed=False) or qnum.fits4(w, signed=signed_weights):
        return MacClass.PARTIAL
    return MacClass.FULL


@dataclass(frozen=True)
class UtilBreakdown:
    full: float
    partial: float
    idle: float

    def as_dict(self) -> dict[str, float]:
        return {"full": self.full, "partial": self.partial, "idle": self.idle}


def util_breakdown(X, W, signed_weights: bool = True) -> UtilBreakdown:
    """Class mix over all M*N*K multiplications of X @ W, without enumerating them."""
    X = np.asarray(X.data if isinstance(X, QTile) else X)
    W = np.asarray(W.data if isinstance(W, QTile) else W)
    M, K = X.shape
    N = W.shape[1]
    x_zero = (X == 0).sum(0)
    x_wide = (X > 15).sum(0)
    w_zero = (W == 0).sum(1)
    w_lo, w_hi = (-8, 7) if signed_weights else (0, 15)
    w_wide = ((W < w_lo) | (W > w_hi)).sum(1)
    total = M * N * K
    if total == 0:
        return UtilBreakdown(0.0, 0.0, 0.0)
    nonidle = int(((M - x_zero) * (N - w_zero)).sum())
    full = int((x_wide * w_wide).sum())
    return UtilBreakdown(full / total, (nonidle - full) / total, (total - nonidle) / total)


def util_gain_model(s: float, T: int) -> float:
    """Predicted utilization gain of T independent threads at sparsity ``s``.

    ``(1 - s**T) / (1 - s)``; equals ``s + 1`` for T=2 and tends to T as s -> 1.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError("sparsity must be in [0, 1]")
    if s == 1.0:
        return float(T)
    return (1 - s**T) / (1 - s)


def measured_util_gain(trace_1t, trace_t) -> float:
    base = trace_1t.utilized_fraction
    if base == 0:
        raise ZeroDivisionError("baseline trace has no utilized PE-cycles")
    return trace_t.utilized_fraction / base


def mse(O, O_ref) -> float:
    O = np.asarray(O, dtype=np.float64)
    O_ref = np.asarray(O_ref, dtype=np.float64)
    if O.shape != O_ref.shape:
        raise ValueError(f"shape mismatch {O.shape} vs {O_ref.shape}")
    return float(np.mean((O - O_ref) ** 2)) if O.size else 0.0


DEFAULT_POWER_MW = {
    (1, 0.8): 320.0,
    (2, 0.8): 429.0,
    (4, 0.8): 723.0,
    (1, 0.4): 277.0,
}


@dataclass
class PowerTable:
    """Average array power in mW by (threads, utilization).

    Lookups snap utilization to 10% buckets and interpolate linearly between
    the known points of the same thread count, clamping outside them.
    """

    entries: dict = field(default_factory=lambda: dict(DEFAULT_POWER_MW))

    def __post_init__(self):
        for (T, u), p in self.entries.items():
            if p <= 0 or not 0.0 <= u <= 1.0:
                raise ValueError(f"bad power entry {(T, u)}: {p}")
        for T in self.thread_counts:
            us, ps = self._curve(T)
            if np.any(np.diff(ps) < 0):
                raise ValueError(f"power for T={T} is not monotone in utilization")

    @property
    def thread_counts(self) -> list[int]:
        return sorted({T for T, _ in self.entries})

    def _curve(self, T: int):
        pts = sorted((u, p) for (t, u), p in self.entries.items() if t == T)
        return np.array([u for u, _ in pts]), np.array([p for _, p in pts])

    def power_mw(self, threads: int, utilization: float) -> float:
        us, ps = self._curve(threads)
        if us.size == 0:
            raise KeyError(f"no power entries for {threads} threads")
        bucket = round(utilization * 10) / 10
        return float(np.interp(bucket, us, ps))

    def to_json(self) -> list:
        return [{"threads": T, "utilization": u, "mw": p} for (T, u), p in sorted(self.entries.items())]

    @classmethod
    def from_json(cls, rows: list) -> "PowerTable":
        return cls({(int(r["threads"]), float(r["utilization"])): float(r["mw"]) for r in rows})


BASE_THROUGHPUT_MACS = 256e9  # 16x16 baseline array at 1 GHz, 256 MACs per cycle


@dataclass(frozen=True)
class LayerWork:
    macs: int
    utilization: float
    threads: int = 1
    name: str = ""


@dataclass
class EnergyReport:
    layer_mj: list[float]
    macs: list[int]
    throughput: list[float]
    total_mj: float

    def as_dict(self) -> dict:
        return {"layer_mj": self.layer_mj, "macs": self.macs,
                "throughput_macs_per_s": self.throughput, "total_mj": self.total_mj}


def energy(layers: Sequence[LayerWork], power: PowerTable | None = None,
           base_throughput: float = BASE_THROUGHPUT_MACS) -> EnergyReport:
    """E_l = MAC_l / throughput_l * P_l; T threads multiply throughput by T."""
    power = power or PowerTable()
    e, thr = [], []
    for layer in layers:
        tp = base_throughput * layer.threads
        p_w = power.power_mw(layer.threads, layer.utilization) / 1e3
        e.append(layer.macs / tp * p_w * 1e3)
        thr.append(tp)
    return EnergyReport(e, [layer.macs for layer in layers], thr, float(sum(e)))


def select_throttled_layers(per_layer_mse: Sequence[float], count: int) -> list[int]:
    """Indices of the ``count`` highest-MSE layers; ties go to earlier layers."""
    if not 0 <= count <= len(per_layer_mse):
        raise ValueError(f"cannot throttle {count} of {len(per_layer_mse)} layers")
    ranked = sorted(range(len(per_layer_mse)), key=lambda i: (-per_layer_mse[i], i))
    return sorted(ranked[:count])


def network_time_fraction(macs: Sequence[int], threads: Sequence[int]) -> Fraction:
    """Steady-state run time relative to the single-thread baseline."""
    total = sum(macs)
    return sum((Fraction(m, total) / t for m, t in zip(macs, threads)), Fraction(0))


def network_speedup(macs: Sequence[int], threads: Sequence[int]) -> Fraction:
    return 1 / network_time_fraction(macs, threads)
