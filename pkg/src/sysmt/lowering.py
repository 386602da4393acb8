"""Workload preparation: quantized tiles, conv lowering, synthetic layers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("act", "wgt")
_TINY = float(np.finfo(np.float64).tiny)  # keeps derived scales positive for subnormal ranges


@dataclass
class QTile:
    """A quantized 2-D tile.

    Activations are unsigned levels in [0, 255] with one per-layer scale;
    weights are signed levels with one scale per output column (kernel).
    """

    data: np.ndarray
    kind: str
    scales: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError("QTile data must be 2-D")
        if not np.issubdtype(self.data.dtype, np.integer):
            raise TypeError("QTile data must be integer levels")
        self.scales = np.atleast_1d(np.asarray(self.scales, dtype=np.float64))
        if np.any(self.scales <= 0):
            raise ValueError("scales must be positive")
        lo, hi = (0, 255) if self.kind == "act" else (-128, 255)
        if self.data.size and (self.data.min() < lo or self.data.max() > hi):
            raise ValueError(f"{self.kind} levels outside [{lo}, {hi}]")
        expected = 1 if self.kind == "act" else self.data.shape[1]
        if self.scales.size not in (1, expected):
            raise ValueError(f"{self.kind} tile needs 1 or {expected} scales, got {self.scales.size}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def column_scales(self) -> np.ndarray:
        if self.scales.size == 1:
            return np.full(self.data.shape[1], self.scales[0])
        return self.scales

    def dequantize(self) -> np.ndarray:
        if self.kind == "act":
            return self.data * self.scales[0]
        return self.data * self.column_scales()[None, :]

    def permute_columns(self, perm) -> "QTile":
        if self.kind == "wgt":
            raise ValueError("weights are permuted by rows")
        return QTile(self.data[:, perm], self.kind, self.scales.copy())

    def permute_rows(self, perm) -> "QTile":
        return QTile(self.data[perm, :], self.kind, self.scales.copy())


def act_tile(data, scale: float = 1.0) -> QTile:
    return QTile(np.asarray(data, dtype=np.int64), "act", [scale])


def wgt_tile(data, scales=1.0) -> QTile:
    data = np.asarray(data, dtype=np.int64)
    scales = np.broadcast_to(np.asarray(scales, dtype=np.float64), (data.shape[1],)).copy()
    return QTile(data, "wgt", scales)


def quantize_acts(values, scale: float | None = None) -> QTile:
    """Per-layer min-max quantization of non-negative activations."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 1:
        v = v[None, :]
    if np.any(v < 0):
        raise ValueError("activations must be non-negative (post-ReLU)")
    if scale is None:
        vmax = float(v.max()) if v.size else 0.0
        scale = max(vmax / 255, _TINY) if vmax > 0 else 1.0
    if scale <= 0:
        raise ValueError("scale must be positive")
    levels = np.clip(np.round(v / scale), 0, 255).astype(np.int64)
    return QTile(levels, "act", [scale])


def quantize_wgts(values) -> QTile:
    """Symmetric per-kernel quantization; kernels are the columns of a K x N matrix.

    A 4-D (F, C, kh, kw) kernel tensor is lowered first.
    """
    w = np.asarray(values, dtype=np.float64)
    if w.ndim == 4:
        w = weights_to_matrix(w)
    if w.ndim != 2:
        raise ValueError("weights must be a K x N matrix or an (F, C, kh, kw) tensor")
    amax = np.abs(w).max(axis=0) if w.size else np.zeros(w.shape[1])
    scales = np.where(amax > 0, np.maximum(amax / 127, _TINY), 1.0)
    levels = np.clip(np.round(w / scales[None, :]), -127, 127).astype(np.int64)
    return QTile(levels, "wgt", scales)


def dequantize_output(O_int, X: QTile, W: QTile) -> np.ndarray:
    """Real-valued layer output: each dot product uses exactly two scales."""
    return np.asarray(O_int, dtype=np.float64) * X.scales[0] * W.column_scales()[None, :]


@dataclass(frozen=True)
class ConvSpec:
    C: int
    H: int
    W: int
    F: int
    kh: int
    kw: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if min(self.C, self.H, self.W, self.F, self.kh, self.kw, self.stride) < 1 or self.padding < 0:
            raise ValueError(f"invalid conv spec {self}")
        if self.out_h < 1 or self.out_w < 1:
            raise ValueError(f"conv spec {self} has empty output")

    @property
    def out_h(self) -> int:
        return (self.H + 2 * self.padding - self.kh) // self.stride + 1

    @property
    def out_w(self) -> int:
        return (self.W + 2 * self.padding - self.kw) // self.stride + 1

    @property
    def K(self) -> int:
        return self.C * self.kh * self.kw


def im2col(x, spec: ConvSpec) -> np.ndarray:
    """(C, H, W) input to an (out_h * out_w, C * kh * kw) activation matrix.

    Each row is one sliding window, so neighbouring rows overlap spatially.
    """
    x = np.asarray(x)
    if x.shape != (spec.C, spec.H, spec.W):
        raise ValueError(f"input shape {x.shape} does not match {spec}")
    p = spec.padding
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (spec.kh, spec.kw), axis=(1, 2))
    win = win[:, ::spec.stride, ::spec.stride][:, :spec.out_h, :spec.out_w]
    # (C, oh, ow, kh, kw) -> (oh, ow, C, kh, kw)
    return win.transpose(1, 2, 0, 3, 4).reshape(spec.out_h * spec.out_w, spec.K)


def weights_to_matrix(w, spec: ConvSpec | None = None) -> np.ndarray:
    """(F, C, kh, kw) kernels to a (C * kh * kw, F) weight matrix."""
    w = np.asarray(w)
    if w.ndim != 4:
        raise ValueError("kernel tensor must be 4-D")
    if spec is not None and w.shape != (spec.F, spec.C, spec.kh, spec.kw):
        raise ValueError(f"kernel shape {w.shape} does not match {spec}")
    return w.reshape(w.shape[0], -1).T


def col2out(O, spec: ConvSpec) -> np.ndarray:
    """Lowered (out_h * out_w, F) result back to (F, out_h, out_w)."""
    return np.asarray(O).T.reshape(spec.F, spec.out_h, spec.out_w)


def _mix(p_zero: float, p_fits4: float, correlation: float) -> np.ndarray:
    p_wide = 1.0 - p_zero - p_fits4
    if min(p_zero, p_fits4) < 0 or p_wide < -1e-12:
        raise ValueError("p_zero and p_fits4 must be non-negative and sum to at most 1")
    if not 0.0 <= correlation <= 1.0:
        raise ValueError("correlation must be in [0, 1]")
    return np.array([p_zero, p_fits4, max(p_wide, 0.0)])


def _activations(col_type: np.ndarray, M: int, probs: np.ndarray, correlation: float,
                 rng: np.random.Generator) -> np.ndarray:
    K = len(col_type)
    own_type = rng.choice(3, size=(M, K), p=probs)
    follow = rng.random((M, K)) < correlation
    typ = np.where(follow, col_type[None, :], own_type)
    x = np.where(typ == 1, rng.integers(1, 16, size=(M, K)), 0)
    return np.where(typ == 2, rng.integers(16, 256, size=(M, K)), x).astype(np.int64)


def gen_synthetic(K: int, M: int, N: int, p_zero: float, p_fits4: float, correlation: float = 0.0,
                  seed: int = 0, w_zero: float = 0.0, w_spread: float = 24.0,
                  x_scale: float = 1 / 255) -> tuple[QTile, QTile]:
    """Random activation/weight tiles with controlled sparsity and width mix.

    Every activation column draws a type (zero / fits-4 / wide) from
    ``(p_zero, p_fits4, 1 - p_zero - p_fits4)``. With probability
    ``correlation`` an element copies its column's type, otherwise it draws
    its own, so the marginal mix is unchanged and ``correlation=1`` gives
    width-homogeneous columns. Fits-4 levels are uniform on [1, 15], wide
    levels uniform on [16, 255].

    Weights are non-zero Laplace-shaped levels in [-127, 127], zeroed with
    probability ``w_zero`` (pruning), with random per-column scales.
    """
    probs = _mix(p_zero, p_fits4, correlation)
    rng = np.random.default_rng(seed)
    col_type = rng.choice(3, size=K, p=probs)
    x = _activations(col_type, M, probs, correlation, rng)

    mag = np.minimum(np.floor(rng.exponential(w_spread, size=(K, N))) + 1, 127).astype(np.int64)
    sign = np.where(rng.random((K, N)) < 0.5, -1, 1)
    w = np.where(rng.random((K, N)) < w_zero, 0, sign * mag)
    w_scales = rng.uniform(0.5, 1.5, size=N) / 127
    return QTile(x, "act", [x_scale]), QTile(w, "wgt", w_scales)


def calibration_samples(K: int, M: int, p_zero: float, p_fits4: float, correlation: float,
                        seed: int, n: int) -> list[np.ndarray]:
    """Fresh activation tiles from the same layer as ``gen_synthetic(..., seed=seed)``.

    They share that layer's column types and redraw every element, standing
    in for the activations of other inputs to the same layer.
    """
    probs = _mix(p_zero, p_fits4, correlation)
    col_type = np.random.default_rng(seed).choice(3, size=K, p=probs)
    return [
        _activations(col_type, M, probs, correlation, np.random.default_rng([seed, 7919, i]))
        for i in range(n)
    ]
