"""Output-stationary systolic array, baseline (T=1) and multithreaded.

Each row of X and column of W is cut into T contiguous blocks, one per
thread; PE (m, n) consumes step ``j`` of every thread in the same cycle and
accumulates all of them into a single psum. Operands enter with the usual
diagonal skew, so PE (m, n) sees step ``j`` at cycle ``j + m + n`` of its
output block.

Two engines produce the same output and trace: ``"cycle"`` clocks explicit
PE registers and is meant for small tiles and debugging, ``"vector"``
evaluates all PE-steps with numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from sysmt import pe_core
from sysmt.pe_core import PEState, Strategy, ThreadInput
from sysmt.lowering import QTile

PIPELINE_DRAIN = 1  # multiply and accumulate stages: +1 cycle latency, no throughput cost


@dataclass(frozen=True)
class TileSpec:
    M: int
    K: int
    N: int

    def __post_init__(self):
        if min(self.M, self.K, self.N) < 1:
            raise ValueError(f"tile dims must be positive, got {self}")


@dataclass(frozen=True)
class GridConfig:
    rows: int = 16
    cols: int = 16
    threads: int = 1
    strategy: Strategy = field(default_factory=Strategy)
    signed_weights: bool = True  # False only for the unsigned worked examples

    def __post_init__(self):
        if self.threads not in (1, 2, 4):
            raise ValueError(f"threads must be 1, 2 or 4, got {self.threads}")
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid dims must be positive")


def steps_for(K: int, T: int) -> int:
    return math.ceil(K / T)


def split_threads(x_row, w_col, T: int):
    """Cut a length-K operand pair into T contiguous thread streams.

    K is padded up to a multiple of T; padded slots are marked invalid.
    Returns a list of ``(x, w, valid)`` array triples.
    """
    x_row = np.asarray(x_row)
    w_col = np.asarray(w_col)
    if x_row.shape != w_col.shape or x_row.ndim != 1:
        raise ValueError("x_row and w_col must be 1-D of equal length")
    K = len(x_row)
    L = steps_for(K, T)
    pad = L * T - K
    xp = np.concatenate([x_row, np.zeros(pad, dtype=x_row.dtype)])
    wp = np.concatenate([w_col, np.zeros(pad, dtype=w_col.dtype)])
    vp = np.arange(L * T) < K
    return [(xp[t * L:(t + 1) * L], wp[t * L:(t + 1) * L], vp[t * L:(t + 1) * L]) for t in range(T)]


def thread_layout(X: np.ndarray, W: np.ndarray, T: int):
    """Rearrange X (M x K) and W (K x N) into per-step thread slots.

    Returns ``Xt`` (M, L, T), ``Wt`` (L, T, N) and ``valid`` (L, T) with
    ``L = ceil(K / T)``; slot ``(j, t)`` holds operand index ``t * L + j``.
    """
    M, K = X.shape
    K2, N = W.shape
    if K != K2:
        raise ValueError(f"inner dims differ: X is {X.shape}, W is {W.shape}")
    L = steps_for(K, T)
    pad = L * T - K
    Xp = np.pad(X.astype(np.int64), ((0, 0), (0, pad)))
    Wp = np.pad(W.astype(np.int64), ((0, pad), (0, 0)))
    valid = (np.arange(L * T) < K).reshape(T, L).T
    Xt = Xp.reshape(M, T, L).transpose(0, 2, 1)
    Wt = Wp.reshape(T, L, N).transpose(1, 0, 2)
    return Xt, Wt, valid


@dataclass(frozen=True)
class Block:
    m0: int
    n0: int
    mb: int
    nb: int


def output_blocks(M: int, N: int, rows: int, cols: int) -> list[Block]:
    return [
        Block(m0, n0, min(rows, M - m0), min(cols, N - n0))
        for m0 in range(0, M, rows)
        for n0 in range(0, N, cols)
    ]


def block_cycles(steps: int, block: Block) -> int:
    return steps + (block.mb - 1) + (block.nb - 1) + PIPELINE_DRAIN


@dataclass(frozen=True)
class FeedSchedule:
    """Skewed injection times for one output block.

    Row ``m`` of X enters the left edge ``m`` cycles late and column ``n`` of
    W enters the top ``n`` cycles late, so both operands of step ``j`` reach
    PE (m, n) at cycle ``j + m + n``.
    """

    steps: int
    mb: int
    nb: int

    def row_step(self, m: int, cycle: int) -> Optional[int]:
        j = cycle - m
        return j if 0 <= j < self.steps else None

    def col_step(self, n: int, cycle: int) -> Optional[int]:
        j = cycle - n
        return j if 0 <= j < self.steps else None

    def meet_cycle(self, m: int, n: int, j: int) -> int:
        return j + m + n

    @property
    def total_cycles(self) -> int:
        return block_cycles(self.steps, Block(0, 0, self.mb, self.nb))


@dataclass
class CycleTrace:
    """Per-PE, per-step outcome record of one simulation.

    ``outcome[m, n, j]`` is the pe_core outcome code of PE (m, n) at step
    ``j``; its wall-clock cycle is ``block_start + j + (m - m0) + (n - n0)``.
    """

    threads: int
    steps: int
    outcome: np.ndarray
    rounded_sites: np.ndarray
    blocks: list[Block]
    block_start: list[int]
    cycles_total: int
    cycles_steady: int
    events: Optional[list] = None  # filled by the cycle engine

    def counts(self) -> dict[str, int]:
        c = np.bincount(self.outcome.ravel(), minlength=4)
        return {name: int(c[i]) for i, name in enumerate(pe_core.OUTCOMES)}

    @property
    def pe_steps(self) -> int:
        return int(self.outcome.size)

    @property
    def utilized_fraction(self) -> float:
        return float(np.count_nonzero(self.outcome != pe_core.NOOP)) / max(self.pe_steps, 1)

    def cycle_of(self, m: int, n: int, j: int) -> int:
        for b, start in zip(self.blocks, self.block_start):
            if b.m0 <= m < b.m0 + b.mb and b.n0 <= n < b.n0 + b.nb:
                return start + j + (m - b.m0) + (n - b.n0)
        raise IndexError((m, n))


def reference_matmul(X, W) -> np.ndarray:
    """Exact widened integer product, checked against the 32-bit accumulator."""
    X = np.asarray(X.data if isinstance(X, QTile) else X, dtype=np.int64)
    W = np.asarray(W.data if isinstance(W, QTile) else W, dtype=np.int64)
    if X.ndim != 2 or W.ndim != 2 or X.shape[1] != W.shape[0]:
        raise ValueError(f"cannot multiply {X.shape} by {W.shape}")
    O = X @ W
    if O.size and (O.min() < -(2**31) or O.max() > 2**31 - 1):
        raise OverflowError("product exceeds the 32-bit accumulator")
    return O


def _check_operands(X: QTile, W: QTile, cfg: GridConfig) -> tuple[np.ndarray, np.ndarray]:
    if X.kind != "act" or W.kind != "wgt":
        raise ValueError("simulate expects an activation tile and a weight tile")
    Xd, Wd = X.data.astype(np.int64), W.data.astype(np.int64)
    if Xd.shape[1] != Wd.shape[0]:
        raise ValueError(f"inner dims differ: X is {Xd.shape}, W is {Wd.shape}")
    if Wd.size:
        lo, hi = (-128, 127) if cfg.signed_weights else (0, 255)
        if Wd.min() < lo or Wd.max() > hi:
            raise ValueError(f"weights outside [{lo}, {hi}] for this weight mode")
    return Xd, Wd


def _schedule(M: int, N: int, K: int, cfg: GridConfig):
    steps = steps_for(K, cfg.threads)
    blocks = output_blocks(M, N, cfg.rows, cfg.cols)
    starts, t = [], 0
    for b in blocks:
        starts.append(t)
        t += block_cycles(steps, b)
    return steps, blocks, starts, t


def simulate(X: QTile, W: QTile, cfg: GridConfig, engine: str = "vector", chunk: int = 1 << 22):
    """Run X @ W on the grid; returns ``(O, trace)``.

    Output blocks larger than the grid are processed one after another with
    no overlap. Total cycles per block are ``ceil(K/T) + (mb-1) + (nb-1) + 1``;
    ``cycles_steady`` counts only the ``ceil(K/T)`` streaming cycles.
    """
    Xd, Wd = _check_operands(X, W, cfg)
    M, K = Xd.shape
    N = Wd.shape[1]
    steps, blocks, starts, total = _schedule(M, N, K, cfg)
    if engine == "vector":
        O, outcome, rounded = _run_vector(Xd, Wd, cfg, chunk)
        events = None
    elif engine == "cycle":
        O, outcome, rounded, events, measured = _run_cycles(Xd, Wd, cfg, blocks, starts)
        assert measured == total, (measured, total)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    if O.size and (O.min() < -(2**31) or O.max() > 2**31 - 1):
        raise OverflowError("output exceeds the 32-bit accumulator")
    trace = CycleTrace(cfg.threads, steps, outcome, rounded, blocks, starts, total,
                       steps * len(blocks), events)
    return O, trace


def _run_vector(Xd, Wd, cfg: GridConfig, chunk: int):
    M, K = Xd.shape
    N = Wd.shape[1]
    T = cfg.threads
    Xt, Wt, valid = thread_layout(Xd, Wd, T)
    L = Xt.shape[1]
    O = np.zeros((M, N), dtype=np.int64)
    outcome = np.zeros((M, N, L), dtype=np.int8)
    rounded = np.zeros((M, N), dtype=np.int64)
    # bound the (M, N, steps, T) temporaries
    per_step = max(M * N * T, 1)
    span = max(1, chunk // per_step)
    for j0 in range(0, L, span):
        j1 = min(L, j0 + span)
        x = np.broadcast_to(Xt[:, None, j0:j1, :], (M, N, j1 - j0, T))
        w = np.broadcast_to(Wt[j0:j1].transpose(2, 0, 1)[None], (M, N, j1 - j0, T))
        v = np.broadcast_to(valid[j0:j1][None, None], (M, N, j1 - j0, T))
        res = pe_core.squeeze_products(x, w, v, cfg.strategy, cfg.signed_weights)
        O += res.contrib.sum(-1)
        outcome[:, :, j0:j1] = res.outcome
        rounded += res.rounded_sites.sum(-1)
    return O, outcome, rounded


def _run_cycles(Xd, Wd, cfg: GridConfig, blocks, starts):
    M, K = Xd.shape
    N = Wd.shape[1]
    T = cfg.threads
    Xt, Wt, valid = thread_layout(Xd, Wd, T)
    L = Xt.shape[1]
    O = np.zeros((M, N), dtype=np.int64)
    outcome = np.zeros((M, N, L), dtype=np.int8)
    rounded = np.zeros((M, N), dtype=np.int64)
    events = []
    clock = 0

    def slots_x(m, j):
        return tuple((int(Xt[m, j, t]), bool(valid[j, t])) for t in range(T))

    def slots_w(n, j):
        return tuple(int(Wt[j, t, n]) for t in range(T))

    for b, start in zip(blocks, starts):
        assert clock == start
        sched = FeedSchedule(L, b.mb, b.nb)
        # a_reg carries (step, x slots) rightward, w_reg carries (step, w slots) downward
        a_reg = [[None] * b.nb for _ in range(b.mb)]
        w_reg = [[None] * b.nb for _ in range(b.mb)]
        state = [[PEState() for _ in range(b.nb)] for _ in range(b.mb)]
        for c in range(sched.total_cycles):
            new_a = [[None] * b.nb for _ in range(b.mb)]
            new_w = [[None] * b.nb for _ in range(b.mb)]
            for m in range(b.mb):
                j = sched.row_step(m, c)
                new_a[m][0] = (j, slots_x(b.m0 + m, j)) if j is not None else None
                for n in range(1, b.nb):
                    new_a[m][n] = a_reg[m][n - 1]
            for n in range(b.nb):
                j = sched.col_step(n, c)
                new_w[0][n] = (j, slots_w(b.n0 + n, j)) if j is not None else None
                for m in range(1, b.mb):
                    new_w[m][n] = w_reg[m - 1][n]
            a_reg, w_reg = new_a, new_w
            for m in range(b.mb):
                for n in range(b.nb):
                    a, w = a_reg[m][n], w_reg[m][n]
                    if a is None or w is None:
                        assert a is None and w is None, "operands out of step"
                        state[m][n] = pe_core.pe_step(state[m][n], None, cfg.strategy, cfg.signed_weights)
                        continue
                    j = a[0]
                    assert j == w[0] and c == sched.meet_cycle(m, n, j)
                    threads = [ThreadInput(xv, wv, ok) for (xv, ok), wv in zip(a[1], w[1])]
                    prev_sites = state[m][n].rounded_sites
                    state[m][n] = pe_core.pe_step(state[m][n], threads, cfg.strategy, cfg.signed_weights)
                    res = state[m][n].pipeline
                    outcome[b.m0 + m, b.n0 + n, j] = res.outcome
                    events.append((start + c, b.m0 + m, b.n0 + n, j, res.mode.value, res.products))
                    assert state[m][n].rounded_sites - prev_sites == res.rounded_sites
        for m in range(b.mb):
            for n in range(b.nb):
                s = state[m][n]
                assert s.pipeline is None and s.cycles == L
                O[b.m0 + m, b.n0 + n] = s.psum
                rounded[b.m0 + m, b.n0 + n] = s.rounded_sites
        clock += sched.total_cycles
    return O, outcome, rounded, events, clock


def speedup(cycles_baseline: int, cycles_smt: int) -> float:
    return cycles_baseline / cycles_smt


def speedup_exact(cycles_baseline: int, cycles_smt: int) -> Fraction:
    return Fraction(cycles_baseline, cycles_smt)
