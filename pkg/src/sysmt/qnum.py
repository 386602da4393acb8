"""Bit-exact 8-bit numerics for the flexible multiplier (fMUL).

Activations are unsigned 8-bit levels, weights signed 8-bit two's complement.
A collision squeezes operands into 4-bit nibbles; a nibble either holds the
operand's low bits (exact, when the value fits in 4 bits) or its rounded high
bits, in which case the lane product is shifted left by 4.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence, Union

ACT_MIN, ACT_MAX = 0, 255
WGT_MIN, WGT_MAX = -128, 127
ACC_MIN, ACC_MAX = -(2**31), 2**31 - 1


class Width(enum.Enum):
    FITS4 = "fits4"
    NEEDS8 = "needs8"


class FMulMode(enum.Enum):
    ONE_8x8 = "1x8b8b"
    TWO_4x8 = "2x4b8b"
    FOUR_4x4 = "4x4b4b"


def check_act(x: int) -> int:
    if not ACT_MIN <= x <= ACT_MAX:
        raise ValueError(f"activation {x} outside [0, 255]")
    return x


def check_wgt(w: int, signed: bool = True) -> int:
    lo, hi = (WGT_MIN, WGT_MAX) if signed else (0, 255)
    if not lo <= w <= hi:
        raise ValueError(f"weight {w} outside [{lo}, {hi}]")
    return w


@dataclass(frozen=True)
class Nibble:
    """A 4-bit multiplier port operand.

    ``shifted`` marks a nibble holding an operand's high bits; its product
    is shifted left by 4 after multiplication. ``saturated`` records that
    rounding overflowed the nibble and was clamped.
    """

    bits: int
    shifted: bool = False
    signed: bool = False
    saturated: bool = False

    def __post_init__(self):
        if not 0 <= self.bits <= 0xF:
            raise ValueError(f"nibble bits {self.bits} outside [0, 15]")

    @property
    def value(self) -> int:
        if self.signed and self.bits & 0x8:
            return self.bits - 16
        return self.bits

    def reconstruct(self) -> int:
        return self.value << 4 if self.shifted else self.value

    @classmethod
    def low(cls, v: int, signed: bool = False) -> "Nibble":
        """LSB nibble of ``v``; exact iff ``v`` fits in 4 bits."""
        return cls(v & 0xF, shifted=False, signed=signed)

    @classmethod
    def high(cls, v: int, signed: bool = False) -> "Nibble":
        """Truncated (unrounded) MSB nibble, used by exact lane splitting."""
        return cls((v >> 4) & 0xF, shifted=True, signed=signed)


def reduce_to_msb_nibble(x: int, signed: bool) -> Nibble:
    """Round ``x`` to a multiple of 16 and keep the high nibble.

    Hardware computes ``x[7:4] + x[3]``. The sum can overflow the nibble
    (unsigned 0xF8-0xFF, signed 0x78-0x7F); those saturate at the largest
    representable nibble and set ``saturated``.
    """
    if signed:
        check_wgt(x)
        pattern = x & 0xFF
        hi = pattern >> 4
        hi = hi - 16 if hi & 0x8 else hi
        r = hi + ((pattern >> 3) & 1)
        sat = r > 7
        r = min(r, 7)
        return Nibble(r & 0xF, shifted=True, signed=True, saturated=sat)
    check_act(x)
    r = (x >> 4) + ((x >> 3) & 1)
    sat = r > 0xF
    return Nibble(min(r, 0xF), shifted=True, signed=False, saturated=sat)


def effective_width(x: int, signed: bool) -> Width:
    # signed: the high nibble must be pure sign extension
    if signed:
        return Width.FITS4 if -8 <= x <= 7 else Width.NEEDS8
    return Width.FITS4 if 0 <= x <= 15 else Width.NEEDS8


def fits4(x: int, signed: bool) -> bool:
    return effective_width(x, signed) is Width.FITS4


def squeeze_nibble(x: int, signed: bool) -> Nibble:
    """Nibble by effective width: exact LSBs if it fits, else rounded MSBs."""
    if fits4(x, signed):
        return Nibble.low(x, signed=signed)
    return reduce_to_msb_nibble(x, signed)


@dataclass(frozen=True)
class Lane:
    """One sub-multiplier input: a 4-bit port and a second port.

    In the 2-thread fMUL the second port is a full 8-bit operand (int); in
    the 4-thread fMUL every lane is nibble x nibble.
    """

    a: Nibble
    b: Union[Nibble, int]
    thread: int = -1

    @property
    def shift(self) -> int:
        s = 4 if self.a.shifted else 0
        if isinstance(self.b, Nibble) and self.b.shifted:
            s += 4
        return s

    def product(self) -> int:
        b = self.b.value if isinstance(self.b, Nibble) else self.b
        return (self.a.value * b) << self.shift


IDLE_LANE_2T = Lane(Nibble(0), 0)
IDLE_LANE_4T = Lane(Nibble(0), Nibble(0))


def split_8x8_2t(x: int, w: int, thread: int = -1) -> tuple[Lane, Lane]:
    """Exact 8b-8b mapping onto the two 5b-8b sub-multipliers."""
    check_act(x)
    return (
        Lane(Nibble.low(x), w, thread),
        Lane(Nibble.high(x), w, thread),
    )


def split_8x8_4t(x: int, w: int, signed_weights: bool = True, thread: int = -1) -> tuple[Lane, ...]:
    """Exact 8b-8b mapping onto four 4b-4b lanes, shifts (8, 4, 4, 0)."""
    check_act(x)
    x_hi, x_lo = Nibble.high(x), Nibble.low(x)
    w_hi = Nibble.high(w, signed=signed_weights)
    w_lo = Nibble.low(w)
    return (
        Lane(x_hi, w_hi, thread),
        Lane(x_hi, w_lo, thread),
        Lane(x_lo, w_hi, thread),
        Lane(x_lo, w_lo, thread),
    )


def split_4x8_4t(nib: Nibble, operand: int, operand_signed: bool, thread: int = -1) -> tuple[Lane, Lane]:
    """A 4b-8b product spread over two 4b-4b lanes (high and low operand nibble)."""
    return (
        Lane(nib, Nibble.high(operand, signed=operand_signed), thread),
        Lane(nib, Nibble.low(operand), thread),
    )


def fmul_2t(lane0: Lane, lane1: Lane, mode: FMulMode) -> tuple[int, int]:
    if mode not in (FMulMode.ONE_8x8, FMulMode.TWO_4x8):
        raise ValueError(f"2-thread fMUL cannot run {mode}")
    for lane in (lane0, lane1):
        if isinstance(lane.b, Nibble):
            raise ValueError("2-thread fMUL lanes take an 8-bit second operand")
    if mode is FMulMode.ONE_8x8:
        if lane0.b != lane1.b:
            raise ValueError("8b-8b mode needs the same 8-bit operand on both lanes")
        if lane0.a.shifted or not lane1.a.shifted:
            raise ValueError("8b-8b mode needs shift flags (0, 1)")
        if lane0.a.signed or lane1.a.signed:
            raise ValueError("8b-8b mode splits an unsigned activation")
    return lane0.product(), lane1.product()


_ONE_8x8_SHIFTS = ((True, True), (True, False), (False, True), (False, False))


def fmul_4t(lanes: Sequence[Lane], mode: FMulMode) -> tuple[int, int, int, int]:
    if len(lanes) != 4:
        raise ValueError("4-thread fMUL takes exactly four lanes")
    for lane in lanes:
        if not isinstance(lane.b, Nibble):
            raise ValueError("4-thread fMUL lanes are nibble x nibble")
    if mode is FMulMode.ONE_8x8:
        shifts = tuple((lane.a.shifted, lane.b.shifted) for lane in lanes)
        if shifts != _ONE_8x8_SHIFTS:
            raise ValueError(f"8b-8b mode needs lane shift pattern {_ONE_8x8_SHIFTS}")
        a_hi, a_lo = lanes[0].a, lanes[2].a
        b_hi, b_lo = lanes[0].b, lanes[1].b
        if lanes[1].a != a_hi or lanes[3].a != a_lo or lanes[2].b != b_hi or lanes[3].b != b_lo:
            raise ValueError("8b-8b mode lanes must come from one operand pair")
    p = tuple(lane.product() for lane in lanes)
    return p[0], p[1], p[2], p[3]


@dataclass(frozen=True)
class FMulRequest:
    """Per-cycle fMUL configuration produced by the PE controller.

    ``rounded`` lists threads whose operands went through MSB rounding;
    ``exact`` holds each thread's full-precision product for bookkeeping.
    """

    mode: FMulMode
    lanes: tuple[Lane, ...]
    rounded: frozenset = frozenset()
    exact: tuple[int, ...] = ()

    def execute(self) -> tuple[int, ...]:
        if len(self.lanes) == 2:
            return fmul_2t(self.lanes[0], self.lanes[1], self.mode)
        return fmul_4t(self.lanes, self.mode)


def lane_sums_by_thread(lanes: Sequence[Lane], products: Sequence[int], n_threads: int) -> list[int]:
    out = [0] * n_threads
    for lane, p in zip(lanes, products):
        if lane.thread >= 0:
            out[lane.thread] += p
    return out
