"""Per-PE control for 2- and 4-threaded PEs sharing one fMUL and one psum.

Two equivalent routes are provided. The scalar route (``control_2t``,
``control_4t``, ``pe_step``) builds explicit :class:`FMulRequest` objects and
is used by the cycle-level grid and the golden tests. ``squeeze_products`` is
the numpy route used for large runs; the tests hold the two in lockstep.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from sysmt import qnum
from sysmt.qnum import FMulMode, FMulRequest, Lane, Nibble


class WidthSource(enum.Enum):
    NONE = ""
    ACT = "A"
    WGT = "W"
    ACT_REDUCE_ACT = "Aw"
    ACT_REDUCE_WGT = "aW"


@dataclass(frozen=True)
class Strategy:
    """Exploitation strategy: ``S`` (8-bit sparsity) plus a width source.

    ``Strategy(False, WidthSource.NONE)`` reduces every squeezed activation
    regardless of width, which is the A4W8-equivalent worst case.
    """

    exploit_sparsity: bool = True
    width_source: WidthSource = WidthSource.ACT

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        parts = [p for p in text.strip().split("+") if p]
        if parts in ([], ["none"], ["reduce"]):
            return cls(False, WidthSource.NONE)
        sparsity = "S" in parts
        rest = [p for p in parts if p != "S"]
        if len(rest) > 1:
            raise ValueError(f"bad strategy {text!r}")
        try:
            ws = WidthSource(rest[0]) if rest else WidthSource.NONE
        except ValueError:
            raise ValueError(f"bad strategy {text!r}") from None
        return cls(sparsity, ws)

    def __str__(self) -> str:
        parts = (["S"] if self.exploit_sparsity else []) + (
            [self.width_source.value] if self.width_source is not WidthSource.NONE else []
        )
        return "+".join(parts) or "none"

    @property
    def reduces_weights(self) -> bool:
        return self.width_source in (WidthSource.WGT, WidthSource.ACT_REDUCE_WGT)


ALL_STRATEGIES = tuple(
    Strategy.parse(s) for s in ("none", "S", "A", "Aw", "S+A", "S+Aw", "W", "aW", "S+W", "S+aW")
)


@dataclass(frozen=True)
class ThreadInput:
    x: int
    w: int
    valid: bool = True

    @property
    def active(self) -> bool:
        return self.valid and self.x != 0 and self.w != 0


PAD = ThreadInput(0, 0, valid=False)


class Activity(enum.Enum):
    ALL_IDLE = "idle"
    ONE_ACTIVE = "one"
    MULTI_ACTIVE = "multi"


class CycleClass(NamedTuple):
    activity: Activity
    value: int  # active index for ONE_ACTIVE, active count for MULTI_ACTIVE


# per-cycle outcome codes; the four are exhaustive and disjoint
NOOP, SINGLE, SQUEEZE_EXACT, SQUEEZE_LOSSY = 0, 1, 2, 3
OUTCOMES = ("noop", "single", "squeeze_exact", "squeeze_lossy")


def classify_cycle(threads: Sequence[ThreadInput]) -> CycleClass:
    if len(threads) not in (2, 4):
        raise ValueError("a PE has 2 or 4 thread slots")
    active = [i for i, t in enumerate(threads) if t.active]
    if not active:
        return CycleClass(Activity.ALL_IDLE, 0)
    if len(active) == 1:
        return CycleClass(Activity.ONE_ACTIVE, active[0])
    return CycleClass(Activity.MULTI_ACTIVE, len(active))


def get_active_thread(threads: Sequence[ThreadInput]) -> tuple[int, bool]:
    """Return ``(index, zero_contribution)``.

    With no active thread the result is thread 0 flagged as contributing
    zero, so the datapath stays uniform.
    """
    active = [i for i, t in enumerate(threads) if t.active]
    if len(active) > 1:
        raise ValueError(f"{len(active)} active threads; expected at most one")
    if not active:
        return 0, True
    return active[0], False


def _demanding(threads: Sequence[ThreadInput], strategy: Strategy) -> list[int]:
    # without S the controller never inspects zeros: every valid slot competes
    if strategy.exploit_sparsity:
        return [i for i, t in enumerate(threads) if t.active]
    return [i for i, t in enumerate(threads) if t.valid]


def _squeeze_thread(t: ThreadInput, strategy: Strategy, signed_weights: bool) -> tuple[Nibble, int, bool, bool]:
    """Pick the 4-bit port operand for one thread of a 2-way squeeze.

    Returns ``(nibble, other_operand, other_is_signed, rounded)``.
    """
    ws = strategy.width_source
    x_fits = qnum.fits4(t.x, signed=False)
    w_fits = qnum.fits4(t.w, signed=signed_weights)

    def act_port():
        if x_fits and ws is not WidthSource.NONE:
            return Nibble.low(t.x), t.w, signed_weights, False
        return qnum.reduce_to_msb_nibble(t.x, signed=False), t.w, signed_weights, True

    def wgt_port():
        if w_fits:
            return Nibble.low(t.w, signed=signed_weights), t.x, False, False
        return qnum.reduce_to_msb_nibble(t.w, signed=signed_weights), t.x, False, True

    if ws in (WidthSource.NONE, WidthSource.ACT):
        return act_port()
    if ws is WidthSource.WGT:
        return wgt_port()
    if ws is WidthSource.ACT_REDUCE_ACT:
        # swap into the 4-bit port only when x needs 8 bits and w fits
        return wgt_port() if (not x_fits and w_fits) else act_port()
    return act_port() if (not w_fits and x_fits) else wgt_port()


def _exact_products(threads: Sequence[ThreadInput]) -> tuple[int, ...]:
    return tuple(t.x * t.w if t.valid else 0 for t in threads)


def control_2t(threads: Sequence[ThreadInput], strategy: Strategy, signed_weights: bool = True) -> FMulRequest:
    if len(threads) != 2:
        raise ValueError("control_2t takes two thread slots")
    exact = _exact_products(threads)
    demand = _demanding(threads, strategy)
    if len(demand) <= 1:
        # at most one taker: the lone thread gets the whole multiplier
        i, _ = get_active_thread(threads) if strategy.exploit_sparsity else (demand[0] if demand else 0, False)
        t = threads[i] if threads[i].valid else ThreadInput(0, 0)
        lo, hi = qnum.split_8x8_2t(t.x, t.w, thread=i)
        return FMulRequest(FMulMode.ONE_8x8, (lo, hi), frozenset(), exact)
    lanes, rounded = [], set()
    for i, t in enumerate(threads):
        nib, other, _, was_rounded = _squeeze_thread(t, strategy, signed_weights)
        lanes.append(Lane(nib, other, i))
        if was_rounded:
            rounded.add(i)
    return FMulRequest(FMulMode.TWO_4x8, tuple(lanes), frozenset(rounded), exact)


def control_4t(threads: Sequence[ThreadInput], strategy: Strategy, signed_weights: bool = True) -> FMulRequest:
    if len(threads) != 4:
        raise ValueError("control_4t takes four thread slots")
    exact = _exact_products(threads)
    demand = _demanding(threads, strategy)
    if len(demand) >= 3:
        lanes, rounded = [], set()
        for i, t in enumerate(threads):
            if i not in demand:
                lanes.append(replace(qnum.IDLE_LANE_4T, thread=i))
                continue
            xn = qnum.squeeze_nibble(t.x, signed=False)
            wn = qnum.squeeze_nibble(t.w, signed=signed_weights)
            lanes.append(Lane(xn, wn, i))
            if xn.shifted or wn.shifted:
                rounded.add(i)
        return FMulRequest(FMulMode.FOUR_4x4, tuple(lanes), frozenset(rounded), exact)
    if len(demand) == 2:
        pair = [threads[i] for i in demand]
        sub = control_2t(pair, strategy, signed_weights)
        lanes = []
        for lane in sub.lanes:
            gi = demand[lane.thread]
            lanes.extend(qnum.split_4x8_4t(lane.a, lane.b, _other_signed(lane, signed_weights), thread=gi))
        rounded = frozenset(demand[j] for j in sub.rounded)
        return FMulRequest(FMulMode.TWO_4x8, tuple(lanes), rounded, exact)
    if strategy.exploit_sparsity:
        i, _ = get_active_thread(threads)
    else:
        i = demand[0] if demand else 0
    t = threads[i] if threads[i].valid else ThreadInput(0, 0)
    lanes = qnum.split_8x8_4t(t.x, t.w, signed_weights, thread=i)
    return FMulRequest(FMulMode.ONE_8x8, lanes, frozenset(), exact)


def _other_signed(lane: Lane, signed_weights: bool) -> bool:
    # a signed nibble in the 4-bit port means the weight was moved there
    return False if lane.a.signed else signed_weights


@dataclass(frozen=True)
class FMulResult:
    mode: FMulMode
    products: tuple[int, ...]
    outcome: int
    rounded_sites: int


@dataclass(frozen=True)
class PEState:
    """Accumulator, outcome counters and the in-flight multiply stage."""

    psum: int = 0
    counters: tuple[int, int, int, int] = (0, 0, 0, 0)
    pipeline: Optional[FMulResult] = None
    rounded_sites: int = 0

    @property
    def cycles(self) -> int:
        return sum(self.counters)


def control(threads: Sequence[ThreadInput], strategy: Strategy, signed_weights: bool = True) -> FMulRequest:
    if len(threads) == 2:
        return control_2t(threads, strategy, signed_weights)
    if len(threads) == 4:
        return control_4t(threads, strategy, signed_weights)
    if len(threads) == 1:
        t = threads[0] if threads[0].valid else ThreadInput(0, 0)
        return FMulRequest(FMulMode.ONE_8x8, qnum.split_8x8_2t(t.x, t.w, thread=0), frozenset(), _exact_products(threads))
    raise ValueError("a PE has 1, 2 or 4 thread slots")


def multiply(threads: Sequence[ThreadInput], strategy: Strategy, signed_weights: bool = True) -> tuple[FMulRequest, FMulResult]:
    """Control plus multiply stage for one cycle."""
    req = control(threads, strategy, signed_weights)
    products = req.execute()
    per_thread = qnum.lane_sums_by_thread(req.lanes, products, len(threads))
    n_active = sum(t.active for t in threads)
    lossy = any(p != e for p, e in zip(per_thread, req.exact))
    if n_active == 0:
        outcome = NOOP
    elif lossy:
        outcome = SQUEEZE_LOSSY
    elif n_active == 1:
        outcome = SINGLE
    else:
        outcome = SQUEEZE_EXACT
    return req, FMulResult(req.mode, products, outcome, len(req.rounded))


def pe_step(state: PEState, threads: Optional[Sequence[ThreadInput]], strategy: Strategy,
            signed_weights: bool = True) -> PEState:
    """Advance one clock: retire the in-flight product, then multiply.

    ``threads=None`` is a bubble (no operands this cycle); it only drains the
    pipeline and is not counted.
    """
    psum = state.psum
    if state.pipeline is not None:
        psum += sum(state.pipeline.products)
        if not qnum.ACC_MIN <= psum <= qnum.ACC_MAX:
            raise OverflowError(f"psum {psum} overflows the 32-bit accumulator")
    if threads is None:
        return replace(state, psum=psum, pipeline=None)
    _, res = multiply(threads, strategy, signed_weights)
    counters = list(state.counters)
    counters[res.outcome] += 1
    return PEState(psum, tuple(counters), res, state.rounded_sites + res.rounded_sites)


def drain(state: PEState) -> PEState:
    return pe_step(state, None, Strategy())


# ---------------------------------------------------------------------------
# vectorized route


def _round_msb(v: np.ndarray, signed: bool) -> np.ndarray:
    """Reconstructed value of ``reduce_to_msb_nibble`` (saturating), elementwise."""
    v = v.astype(np.int64)
    if signed:
        r = (v >> 4) + ((v >> 3) & 1)
        return np.minimum(r, 7) << 4
    r = (v >> 4) + ((v >> 3) & 1)
    return np.minimum(r, 15) << 4


def _fits4(v: np.ndarray, signed: bool) -> np.ndarray:
    if signed:
        return (v >= -8) & (v <= 7)
    return (v >= 0) & (v <= 15)


@dataclass
class SqueezeResult:
    contrib: np.ndarray  # psum increment per cycle
    outcome: np.ndarray  # NOOP/SINGLE/SQUEEZE_EXACT/SQUEEZE_LOSSY
    rounded_sites: np.ndarray  # thread terms that went through MSB rounding
    utilized: np.ndarray = field(init=False)

    def __post_init__(self):
        self.utilized = self.outcome != NOOP


def squeeze_products(x: np.ndarray, w: np.ndarray, valid: np.ndarray, strategy: Strategy,
                     signed_weights: bool = True) -> SqueezeResult:
    """Vectorized equivalent of ``multiply`` over arrays shaped ``(..., T)``."""
    x = np.asarray(x, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    valid = np.asarray(valid, dtype=bool)
    x = np.where(valid, x, 0)
    w = np.where(valid, w, 0)
    T = x.shape[-1]
    if T not in (1, 2, 4) or w.shape != x.shape or valid.shape != x.shape:
        raise ValueError(f"expected matching (..., T) arrays with T in (1, 2, 4), got {x.shape}")
    exact = x * w
    active = valid & (x != 0) & (w != 0)
    n_active = active.sum(-1)
    demand = active if strategy.exploit_sparsity else valid
    n_demand = demand.sum(-1)

    zeros = np.zeros(x.shape, dtype=bool)
    if T == 1:
        sq2 = sq4 = exact
        r2 = r4 = zeros
        use2 = use4 = np.zeros(n_demand.shape, dtype=bool)
    else:
        x_fit = _fits4(x, False)
        w_fit = _fits4(w, signed_weights)
        rx = _round_msb(x, False)
        rw = _round_msb(w, signed_weights)
        ws = strategy.width_source
        red_x = rx * w
        red_w = x * rw
        if ws is WidthSource.NONE:
            sq2, r2 = red_x, np.ones_like(x_fit)
        elif ws is WidthSource.ACT:
            sq2, r2 = np.where(x_fit, exact, red_x), ~x_fit
        elif ws is WidthSource.WGT:
            sq2, r2 = np.where(w_fit, exact, red_w), ~w_fit
        elif ws is WidthSource.ACT_REDUCE_ACT:
            ok = x_fit | w_fit
            sq2, r2 = np.where(ok, exact, red_x), ~ok
        else:
            ok = x_fit | w_fit
            sq2, r2 = np.where(ok, exact, red_w), ~ok
        use2 = n_demand >= 2 if T == 2 else n_demand == 2
        # four-way squeeze: both operands by effective width
        qx = np.where(x_fit, x, rx)
        qw = np.where(w_fit, w, rw)
        sq4, r4 = qx * qw, ~(x_fit & w_fit)
        use4 = n_demand >= 3 if T == 4 else np.zeros(n_demand.shape, dtype=bool)

    u2 = use2[..., None] & demand
    u4 = use4[..., None] & demand
    squeezed = (use2 | use4)[..., None]
    per_thread = np.where(u4, sq4, np.where(u2, sq2, np.where(squeezed, 0, exact)))
    rounded = (u2 & r2) | (u4 & r4)
    # a rounded term whose operand is 0 produces 0 either way, but still counts as a site
    lossy = np.any(per_thread != exact, axis=-1)
    outcome = np.where(
        n_active == 0, NOOP,
        np.where(lossy, SQUEEZE_LOSSY, np.where(n_active == 1, SINGLE, SQUEEZE_EXACT)),
    ).astype(np.int8)
    return SqueezeResult(per_thread.sum(-1), outcome, rounded.sum(-1))
