import numpy as np
import pytest
from hypothesis import given, strategies as st

from sysmt import pe_core, qnum
from sysmt.pe_core import (
    ALL_STRATEGIES, NOOP, SINGLE, SQUEEZE_EXACT, SQUEEZE_LOSSY, Activity, PEState, Strategy,
    ThreadInput, WidthSource,
)
from sysmt.qnum import FMulMode

S_A = Strategy.parse("S+A")
A = Strategy.parse("A")
NONE = Strategy.parse("none")


# ---- worked examples -------------------------------------------------------

def test_both_activations_reduced():
    req = pe_core.control_2t([ThreadInput(46, 23), ThreadInput(178, 242)], A, signed_weights=False)
    assert req.mode is FMulMode.TWO_4x8
    assert req.execute() == (1104, 42592)
    assert req.rounded == {0, 1}
    assert req.exact == (1058, 43076)


def test_zero_thread_yields_the_multiplier():
    threads = [ThreadInput(0, 23), ThreadInput(178, 242)]
    req, res = pe_core.multiply(threads, S_A, signed_weights=False)
    assert req.mode is FMulMode.ONE_8x8
    assert sum(res.products) == 43076
    assert res.outcome == SINGLE and res.rounded_sites == 0


def test_narrow_thread_uses_lsb_nibble_wide_thread_shifted():
    threads = [ThreadInput(224, 23), ThreadInput(2, 242)]
    req, res = pe_core.multiply(threads, S_A, signed_weights=False)
    assert req.mode is FMulMode.TWO_4x8
    assert req.lanes[0].a == qnum.Nibble(14, shifted=True)
    assert req.lanes[1].a == qnum.Nibble(2)
    assert res.products == (5152, 484)
    assert sum(res.products) == 5636
    # 224 is a multiple of 16, so the squeeze is exact here
    assert res.outcome == SQUEEZE_EXACT and res.rounded_sites == 1


def test_without_sparsity_a_zero_thread_still_collides():
    threads = [ThreadInput(0, 23), ThreadInput(178, 242)]
    _, res = pe_core.multiply(threads, A, signed_weights=False)
    assert sum(res.products) == 42592
    assert res.outcome == SQUEEZE_LOSSY


# ---- strategy plumbing -----------------------------------------------------

@pytest.mark.parametrize("s", ALL_STRATEGIES)
def test_strategy_str_roundtrip(s):
    assert Strategy.parse(str(s)) == s


def test_strategy_parse_aliases_and_errors():
    assert Strategy.parse("reduce") == Strategy(False, WidthSource.NONE)
    assert Strategy.parse("S") == Strategy(True, WidthSource.NONE)
    assert Strategy.parse("S+aW").reduces_weights
    for bad in ("S+A+W", "B", "S+X"):
        with pytest.raises(ValueError):
            Strategy.parse(bad)


def test_classify_and_active_thread():
    idle = [ThreadInput(0, 5), ThreadInput(4, 0)]
    assert pe_core.classify_cycle(idle).activity is Activity.ALL_IDLE
    assert pe_core.get_active_thread(idle) == (0, True)
    one = [ThreadInput(0, 5), ThreadInput(4, 2)]
    assert pe_core.classify_cycle(one) == (Activity.ONE_ACTIVE, 1)
    assert pe_core.get_active_thread(one) == (1, False)
    many = [ThreadInput(1, 1)] * 3 + [pe_core.PAD]
    assert pe_core.classify_cycle(many) == (Activity.MULTI_ACTIVE, 3)
    with pytest.raises(ValueError):
        pe_core.get_active_thread(many)
    with pytest.raises(ValueError):
        pe_core.classify_cycle(many[:3])


def test_width_source_port_choice():
    t = ThreadInput(200, 3)  # wide activation, narrow weight
    assert pe_core.control_2t([t, t], Strategy.parse("A")).rounded == {0, 1}
    assert pe_core.control_2t([t, t], Strategy.parse("Aw")).rounded == frozenset()
    assert pe_core.control_2t([t, t], Strategy.parse("W")).rounded == frozenset()
    u = ThreadInput(3, 100)  # narrow activation, wide weight
    assert pe_core.control_2t([u, u], Strategy.parse("W")).rounded == {0, 1}
    assert pe_core.control_2t([u, u], Strategy.parse("aW")).rounded == frozenset()
    assert pe_core.control_2t([u, u], Strategy.parse("A")).rounded == frozenset()
    # "none" ignores width entirely
    assert pe_core.control_2t([u, u], NONE).rounded == {0, 1}


def test_4t_three_way_collision_uses_4x4_lanes():
    threads = [ThreadInput(5, 3), ThreadInput(200, -100), ThreadInput(9, 7), ThreadInput(0, 1)]
    req, res = pe_core.multiply(threads, S_A)
    assert req.mode is FMulMode.FOUR_4x4
    assert req.rounded == {1}
    assert res.products[0] == 15 and res.products[2] == 63 and res.products[3] == 0
    assert res.products[1] == 208 * -96
    assert res.outcome == SQUEEZE_LOSSY


def test_4t_two_way_collision_splits_each_4x8_over_two_lanes():
    threads = [ThreadInput(0, 3), ThreadInput(12, -100), pe_core.PAD, ThreadInput(250, 6)]
    req, res = pe_core.multiply(threads, S_A)
    assert req.mode is FMulMode.TWO_4x8
    assert len(req.lanes) == 4
    # 250 rounds up past the nibble and saturates at 240
    assert sum(res.products) == 12 * -100 + 240 * 6
    assert req.rounded == {3}


def test_4t_single_active_exact():
    threads = [ThreadInput(0, 3), ThreadInput(251, -128), ThreadInput(7, 0), pe_core.PAD]
    req, res = pe_core.multiply(threads, S_A)
    assert req.mode is FMulMode.ONE_8x8
    assert sum(res.products) == 251 * -128 and res.outcome == SINGLE


# ---- error-free guarantee ----------------------------------------------------

@given(st.sampled_from(ALL_STRATEGIES), st.sampled_from([2, 4]), st.data())
def test_single_active_cycle_is_exact_with_sparsity(strategy, T, data):
    if not strategy.exploit_sparsity:
        return
    k = data.draw(st.integers(0, T - 1))
    threads = []
    for i in range(T):
        if i == k:
            threads.append(ThreadInput(data.draw(st.integers(0, 255)), data.draw(st.integers(-128, 127))))
        else:
            x = data.draw(st.integers(0, 255))
            threads.append(ThreadInput(x, 0) if x else ThreadInput(0, data.draw(st.integers(-128, 127))))
    _, res = pe_core.multiply(threads, strategy)
    assert sum(res.products) == sum(t.x * t.w for t in threads)
    assert res.outcome != SQUEEZE_LOSSY


@given(st.sampled_from([s for s in ALL_STRATEGIES if s.width_source is not WidthSource.NONE]),
       st.sampled_from([2, 4]), st.lists(st.tuples(st.integers(0, 15), st.integers(-8, 7)), min_size=4, max_size=4))
def test_all_narrow_cycle_is_exact(strategy, T, pairs):
    threads = [ThreadInput(x, w) for x, w in pairs[:T]]
    _, res = pe_core.multiply(threads, strategy)
    assert sum(res.products) == sum(x * w for x, w in pairs[:T])


# ---- scalar and vector routes agree ----------------------------------------

def _slot(draw, signed):
    x = draw(st.one_of(st.just(0), st.integers(1, 15), st.integers(0, 255)))
    wide = st.integers(-128, 127) if signed else st.integers(0, 255)
    narrow = st.integers(-8, 7) if signed else st.integers(0, 15)
    w = draw(st.one_of(st.just(0), narrow, wide))
    valid = draw(st.integers(0, 5)) > 0
    return ThreadInput(x, w, valid)


@given(st.sampled_from(ALL_STRATEGIES), st.sampled_from([1, 2, 4]), st.booleans(), st.data())
def test_vector_route_matches_scalar(strategy, T, signed, data):
    threads = [_slot(data.draw, signed) for _ in range(T)]
    if T == 1:
        req = pe_core.control(threads, strategy, signed)
        products = req.execute()
        n_active = sum(t.active for t in threads)
        outcome, sites = (SINGLE if n_active else NOOP), 0
    else:
        _, res = pe_core.multiply(threads, strategy, signed)
        products, outcome, sites = res.products, res.outcome, res.rounded_sites
    v = pe_core.squeeze_products(
        np.array([[t.x for t in threads]]), np.array([[t.w for t in threads]]),
        np.array([[t.valid for t in threads]]), strategy, signed)
    assert int(v.contrib[0]) == sum(products)
    assert int(v.outcome[0]) == outcome
    assert int(v.rounded_sites[0]) == sites


def test_squeeze_products_rejects_bad_thread_count():
    z = np.zeros((2, 3), dtype=np.int64)
    with pytest.raises(ValueError):
        pe_core.squeeze_products(z, z, z.astype(bool), S_A)


# ---- error-site subset property -------------------------------------------

@given(st.lists(st.tuples(st.integers(0, 255), st.integers(-128, 127)), min_size=2, max_size=2))
def test_rounded_sites_nest_across_strategies(pairs):
    threads = [ThreadInput(x, w) for x, w in pairs]
    sites = {str(s): pe_core.control_2t(threads, s).rounded for s in (S_A, A, NONE)}
    assert sites["S+A"] <= sites["A"] <= sites["none"]


# ---- PE state --------------------------------------------------------------

def test_pe_step_accumulates_with_one_cycle_latency():
    st0 = PEState()
    st1 = pe_core.pe_step(st0, [ThreadInput(3, 4), ThreadInput(0, 9)], S_A)
    assert st1.psum == 0 and sum(st1.pipeline.products) == 12
    st2 = pe_core.pe_step(st1, [ThreadInput(10, -2), ThreadInput(1, 1)], S_A)
    assert st2.psum == 12
    st3 = pe_core.drain(st2)
    assert st3.psum == 12 - 20 + 1 and st3.pipeline is None
    assert st3.counters == (0, 1, 1, 0) and st3.cycles == 2


def test_pe_step_bubble_is_not_counted():
    s = pe_core.pe_step(PEState(), None, S_A)
    assert s == PEState()


def test_psum_overflow_raises():
    s = PEState(psum=2**31 - 10, pipeline=pe_core.FMulResult(FMulMode.ONE_8x8, (255 * 127, 0), SINGLE, 0))
    with pytest.raises(OverflowError):
        pe_core.drain(s)


# ---- per-operation examples ---------------------------------------------------

def test_classify_examples():
    assert pe_core.classify_cycle([ThreadInput(0, 23), ThreadInput(178, 242)]) == (Activity.ONE_ACTIVE, 1)
    assert pe_core.classify_cycle([ThreadInput(46, 23), ThreadInput(178, 242)]) == (Activity.MULTI_ACTIVE, 2)
    assert pe_core.classify_cycle([ThreadInput(0, 5), ThreadInput(7, 0)]).activity is Activity.ALL_IDLE
    assert pe_core.get_active_thread([ThreadInput(0, 23), ThreadInput(178, 242)]) == (1, False)
    assert pe_core.get_active_thread([ThreadInput(46, 23), ThreadInput(0, 9)]) == (0, False)


def test_every_zero_pattern_contributes_nothing():
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                for d in (0, 1):
                    threads = [ThreadInput(a, b), ThreadInput(c, d)]
                    if any(t.active for t in threads):
                        continue
                    _, res = pe_core.multiply(threads, S_A)
                    assert sum(res.products) == 0 and res.outcome == NOOP


def test_two_narrow_activations_squeeze_exactly():
    req, res = pe_core.multiply([ThreadInput(14, 23), ThreadInput(9, 242)], S_A, signed_weights=False)
    assert req.mode is FMulMode.TWO_4x8 and not any(l.a.shifted for l in req.lanes)
    assert sum(res.products) == 14 * 23 + 9 * 242 and res.outcome == SQUEEZE_EXACT


def test_swap_puts_narrow_weight_in_4bit_port():
    req, res = pe_core.multiply([ThreadInput(23, 14), ThreadInput(9, 242)], Strategy.parse("S+Aw"),
                                signed_weights=False)
    assert req.lanes[0].a == qnum.Nibble(14) and req.lanes[0].b == 23
    assert sum(res.products) == 23 * 14 + 9 * 242 and res.outcome == SQUEEZE_EXACT


def test_reduced_but_effectively_exact():
    req, res = pe_core.multiply([ThreadInput(176, 23), ThreadInput(9, 242)], S_A, signed_weights=False)
    assert req.rounded == {0} and req.lanes[0].a.shifted
    assert sum(res.products) == 176 * 23 + 9 * 242 and res.outcome == SQUEEZE_EXACT


def test_4t_all_narrow_four_way_is_exact():
    threads = [ThreadInput(15, -8), ThreadInput(1, 7), ThreadInput(9, -1), ThreadInput(4, 3)]
    req, res = pe_core.multiply(threads, S_A)
    assert req.mode is FMulMode.FOUR_4x4 and not req.rounded
    assert sum(res.products) == sum(t.x * t.w for t in threads)


def test_4t_two_active_follows_2t_logic():
    threads = [ThreadInput(46, 23), ThreadInput(178, 100), ThreadInput(0, 5), ThreadInput(3, 0)]
    req4, res4 = pe_core.multiply(threads, S_A)
    req2, res2 = pe_core.multiply(threads[:2], S_A)
    assert req4.mode is req2.mode is FMulMode.TWO_4x8
    assert sum(res4.products) == sum(res2.products) and req4.rounded == req2.rounded


def test_4t_three_active_wide_thread_rounds_both_operands():
    threads = [ThreadInput(178, -100), ThreadInput(2, 3), ThreadInput(5, 1), pe_core.PAD]
    req, res = pe_core.multiply(threads, S_A)
    assert req.lanes[0].a.shifted and req.lanes[0].b.shifted
    assert res.products[0] == 176 * -96


def test_single_active_stream_psum_exact():
    rng = np.random.default_rng(0)
    s, ref = PEState(), 0
    for _ in range(50):
        x, w = int(rng.integers(0, 256)), int(rng.integers(-128, 128))
        s = pe_core.pe_step(s, [ThreadInput(x, w), ThreadInput(0, int(rng.integers(-128, 128)))], S_A)
        ref += x * w
    assert pe_core.drain(s).psum == ref


def test_one_cycle_mixed_shift_psum():
    s = pe_core.pe_step(PEState(), [ThreadInput(224, 23), ThreadInput(2, 242)], S_A, signed_weights=False)
    assert pe_core.drain(s).psum == 5636


@given(st.lists(st.tuples(st.integers(0, 15), st.integers(-8, 7)), min_size=2, max_size=2), st.integers(1, 20))
def test_narrow_two_thread_stream_psum_exact(pair, n):
    s = PEState()
    for _ in range(n):
        s = pe_core.pe_step(s, [ThreadInput(x, w) for x, w in pair], S_A)
    assert pe_core.drain(s).psum == n * sum(x * w for x, w in pair)
