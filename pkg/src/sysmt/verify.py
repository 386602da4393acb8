"""Independent oracles run by ``sysmt verify``.

Each check compares an implementation path against a separately written
reference and returns the first counterexample it finds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from sysmt import qnum
from sysmt.lowering import ConvSpec, im2col, weights_to_matrix


@dataclass
class CheckResult:
    name: str
    ok: bool
    checked: int
    seconds: float
    counterexample: Optional[str] = None

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        tail = "" if self.ok else f"  counterexample: {self.counterexample}"
        return f"[{status}] {self.name}: {self.checked} cases in {self.seconds:.2f}s{tail}"


def check_fmul_exhaustive(fmul2: Callable = qnum.fmul_2t, fmul4: Callable = qnum.fmul_4t) -> CheckResult:
    """Both 8b-8b decompositions against the widened product, all 2^16 pairs."""
    t0 = time.perf_counter()
    n = 0
    for x in range(256):
        lo, hi = qnum.split_8x8_2t(x, 0)
        for w in range(-128, 128):
            l0, l1 = qnum.Lane(lo.a, w), qnum.Lane(hi.a, w)
            got2 = sum(fmul2(l0, l1, qnum.FMulMode.ONE_8x8))
            got4 = sum(fmul4(qnum.split_8x8_4t(x, w), qnum.FMulMode.ONE_8x8))
            n += 1
            if got2 != x * w or got4 != x * w:
                return CheckResult("fmul 8b-8b recomposition", False, n, time.perf_counter() - t0,
                                   f"x={x} w={w}: 2T={got2} 4T={got4} expected {x * w}")
    return CheckResult("fmul 8b-8b recomposition", True, n, time.perf_counter() - t0)


def rounding_oracle(v: int, signed: bool) -> int:
    # nearest multiple of 16, ties upward, clamped to the largest nibble
    top = 112 if signed else 240
    return min(((v + 8) // 16) * 16, top)


def check_rounding(reduce: Callable = qnum.reduce_to_msb_nibble) -> CheckResult:
    t0 = time.perf_counter()
    n = 0
    for signed, values in ((False, range(256)), (True, range(-128, 128))):
        for v in values:
            n += 1
            got = reduce(v, signed).reconstruct()
            want = rounding_oracle(v, signed)
            bound = 15 if (v >= 248 or (signed and v >= 120)) else 8
            if got != want or abs(got - v) > bound:
                return CheckResult("msb rounding", False, n, time.perf_counter() - t0,
                                   f"v={v} signed={signed}: got {got} expected {want}")
    return CheckResult("msb rounding", True, n, time.perf_counter() - t0)


def direct_conv(x: np.ndarray, w: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Naive sliding-window convolution (cross-correlation) in integers."""
    p, s = spec.padding, spec.stride
    xp = np.zeros((spec.C, spec.H + 2 * p, spec.W + 2 * p), dtype=np.int64)
    xp[:, p:p + spec.H, p:p + spec.W] = x
    out = np.zeros((spec.F, spec.out_h, spec.out_w), dtype=np.int64)
    for f in range(spec.F):
        for i in range(spec.out_h):
            for j in range(spec.out_w):
                acc = 0
                for c in range(spec.C):
                    for a in range(spec.kh):
                        for b in range(spec.kw):
                            acc += int(xp[c, i * s + a, j * s + b]) * int(w[f, c, a, b])
                out[f, i, j] = acc
    return out


def random_conv_spec(rng: np.random.Generator) -> ConvSpec:
    while True:
        kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        try:
            return ConvSpec(C=int(rng.integers(1, 4)), H=int(rng.integers(3, 8)), W=int(rng.integers(3, 8)),
                            F=int(rng.integers(1, 5)), kh=kh, kw=kw, stride=int(rng.integers(1, 3)),
                            padding=int(rng.integers(0, 2)))
        except ValueError:
            continue


def check_lowering(n: int = 50, seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    for i in range(n):
        spec = random_conv_spec(rng)
        x = rng.integers(0, 256, size=(spec.C, spec.H, spec.W))
        w = rng.integers(-128, 128, size=(spec.F, spec.C, spec.kh, spec.kw))
        lowered = (im2col(x, spec).astype(np.int64) @ weights_to_matrix(w, spec).astype(np.int64))
        got = lowered.T.reshape(spec.F, spec.out_h, spec.out_w)
        want = direct_conv(x, w, spec)
        if not np.array_equal(got, want):
            return CheckResult("im2col lowering", False, i + 1, time.perf_counter() - t0, f"spec={spec}")
    return CheckResult("im2col lowering", True, n, time.perf_counter() - t0)


def run_all(**kw) -> list[CheckResult]:
    return [
        check_fmul_exhaustive(kw.get("fmul2", qnum.fmul_2t), kw.get("fmul4", qnum.fmul_4t)),
        check_rounding(kw.get("reduce", qnum.reduce_to_msb_nibble)),
        check_lowering(),
    ]
