"""Offline statistics-driven reordering of activation columns.

Columns of X are permuted (and rows of W with them) so that, after the
contiguous thread split, columns likely to hold wide values share a step
with columns likely to hold zeros, and 4-bit-heavy columns share steps with
each other.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from sysmt.lowering import QTile


@dataclass(frozen=True)
class ColumnStats:
    p_zero: np.ndarray
    p_fits4: np.ndarray
    p_wide: np.ndarray
    sample_count: int

    @property
    def K(self) -> int:
        return len(self.p_zero)

    @property
    def p_active(self) -> np.ndarray:
        return self.p_fits4 + self.p_wide

    def to_rows(self) -> list[dict]:
        return [
            {"column": k, "p_zero": float(z), "p_fits4": float(f), "p_wide": float(w)}
            for k, (z, f, w) in enumerate(zip(self.p_zero, self.p_fits4, self.p_wide))
        ]


@dataclass(frozen=True)
class ScoreWeights:
    """Linear column score; higher scores sit earlier in the rank order."""

    wide: float = 1.0
    fits4: float = 0.0
    zero: float = -1.0

    def score(self, stats: ColumnStats) -> np.ndarray:
        return self.wide * stats.p_wide + self.fits4 * stats.p_fits4 + self.zero * stats.p_zero


def gather_stats(samples: Sequence) -> ColumnStats:
    """Per-column frequencies of zero, [1, 15] and >= 16 activation levels."""
    if not samples:
        raise ValueError("need at least one sample tile")
    arrays = [np.asarray(s.data if isinstance(s, QTile) else s) for s in samples]
    K = arrays[0].shape[1]
    if any(a.ndim != 2 or a.shape[1] != K for a in arrays):
        raise ValueError("sample tiles must share the column count K")
    data = np.concatenate(arrays, axis=0)
    n = data.shape[0]
    zero = (data == 0).sum(0) / n
    fits = ((data >= 1) & (data <= 15)).sum(0) / n
    wide = (data >= 16).sum(0) / n
    return ColumnStats(zero, fits, wide, n)


def compute_permutation(stats: ColumnStats, T: int, weights: ScoreWeights = ScoreWeights()) -> np.ndarray:
    """Deterministic rank striping.

    Columns are ranked by score (ties by index) and dealt into the T thread
    blocks in a snake: block 0 takes the top ranks in ascending position,
    block 1 the next ranks in descending position, and so on. For T=2 this
    pairs rank ``j`` with rank ``K-1-j``: widest with emptiest, middle with
    middle. Uniform scores give the identity.

    Returns ``perm`` with ``X' = X[:, perm]``.
    """
    K = stats.K
    if K < T:
        raise ValueError(f"K={K} is smaller than T={T}")
    score = weights.score(stats)
    if T == 1 or np.ptp(score) == 0:
        return np.arange(K)
    order = np.argsort(-score, kind="stable")
    L = -(-K // T)
    slots = []
    for t in range(T):
        js = range(L) if t % 2 == 0 else range(L - 1, -1, -1)
        slots.extend(t * L + j for j in js if t * L + j < K)
    perm = np.empty(K, dtype=np.int64)
    perm[np.array(slots)] = order
    return perm


def validate_permutation(perm, K: int) -> np.ndarray:
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (K,):
        raise ValueError(f"permutation length {perm.shape} does not match K={K}")
    if not np.array_equal(np.sort(perm), np.arange(K)):
        raise ValueError("not a bijection on range(K)")
    return perm


def apply_permutation(X: QTile, W: QTile, perm) -> tuple[QTile, QTile]:
    perm = validate_permutation(perm, X.shape[1])
    if W.shape[0] != X.shape[1]:
        raise ValueError("W rows must match X columns")
    return X.permute_columns(perm), W.permute_rows(perm)


def _thread_groups(perm: np.ndarray, T: int) -> list[list[int]]:
    """Columns sharing each step after the contiguous split."""
    K = len(perm)
    L = -(-K // T)
    return [[int(perm[t * L + j]) for t in range(T) if t * L + j < K] for j in range(L)]


def expected_collisions(stats: ColumnStats, perm, T: int, lossy_only: bool = False) -> float:
    """Expected number of steps with two or more active threads, per matrix row.

    Columns are treated as independent. With ``lossy_only`` (T=2 only), a
    collision counts only when some active thread holds a wide value, which is
    what costs precision under an activation-width strategy.
    """
    perm = validate_permutation(perm, stats.K)
    if lossy_only and T != 2:
        raise ValueError("lossy collision expectation is defined for T=2")
    a, f = stats.p_active, stats.p_fits4
    total = 0.0
    for group in _thread_groups(perm, T):
        if lossy_only:
            if len(group) == 2:
                i, k = group
                total += a[i] * a[k] - f[i] * f[k]
            continue
        # P(>=2 active) = 1 - P(0) - P(1)
        p0 = np.prod([1 - a[i] for i in group])
        p1 = sum(a[i] * np.prod([1 - a[k] for k in group if k != i]) for i in group)
        total += 1 - p0 - p1
    return float(total)


def save_permutation(perm, path) -> None:
    Path(path).write_text(json.dumps([int(p) for p in perm]) + "\n")


def load_permutation(path) -> np.ndarray:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list) or not all(isinstance(v, int) for v in data):
        raise ValueError(f"{path}: expected a JSON array of integer indices")
    return validate_permutation(data, len(data))
