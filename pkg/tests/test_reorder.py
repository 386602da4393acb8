import itertools
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sysmt import reorder
from sysmt.lowering import act_tile, gen_synthetic, wgt_tile
from sysmt.reorder import ColumnStats, ScoreWeights
from sysmt.systolic import reference_matmul


def pure_stats(kinds):
    """Stats for columns that are always zero (0), always narrow (1) or always wide (2)."""
    k = np.asarray(kinds)
    return ColumnStats((k == 0).astype(float), (k == 1).astype(float), (k == 2).astype(float), 1)


def best_pairing_cost(stats, lossy_only):
    # brute force over all permutations; fine for K <= 7
    return min(reorder.expected_collisions(stats, np.array(p), 2, lossy_only)
               for p in itertools.permutations(range(stats.K)))


def test_gather_stats_frequencies():
    s = reorder.gather_stats([np.array([[0, 3, 200], [0, 20, 15]]), act_tile([[5, 0, 16]])])
    assert s.sample_count == 3
    assert np.allclose(s.p_zero, [2 / 3, 1 / 3, 0])
    assert np.allclose(s.p_fits4, [1 / 3, 1 / 3, 1 / 3])
    assert np.allclose(s.p_wide, [0, 1 / 3, 2 / 3])
    with pytest.raises(ValueError):
        reorder.gather_stats([])
    with pytest.raises(ValueError):
        reorder.gather_stats([np.zeros((1, 2)), np.zeros((1, 3))])


def test_uniform_scores_keep_identity():
    s = pure_stats([1] * 7)
    for T in (1, 2, 4):
        assert reorder.compute_permutation(s, T).tolist() == list(range(7))


def test_two_thread_snake_pairs_extremes():
    s = pure_stats([0, 2, 1, 0, 2, 1])
    perm = reorder.compute_permutation(s, 2)
    groups = reorder._thread_groups(perm, 2)
    kinds = [sorted(int(np.argmax([s.p_zero[c], s.p_fits4[c], s.p_wide[c]])) for c in g) for g in groups]
    assert kinds == [[0, 2], [0, 2], [1, 1]]


@given(st.lists(st.floats(0, 1), min_size=4, max_size=30), st.sampled_from([2, 4]))
def test_permutation_is_a_bijection(ps, T):
    z = np.array(ps)
    s = ColumnStats(z, (1 - z) / 2, (1 - z) / 2, 10)
    perm = reorder.compute_permutation(s, T)
    assert sorted(perm.tolist()) == list(range(len(ps)))


@pytest.mark.parametrize("lossy_only", [False, True])
def test_snake_is_optimal_when_zeros_cover_wide_columns(lossy_only):
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 25:
        K = int(rng.integers(2, 8))
        kinds = rng.integers(0, 3, size=K)
        if (kinds == 2).sum() > (kinds == 0).sum():
            continue
        s = pure_stats(kinds)
        perm = reorder.compute_permutation(s, 2)
        got = reorder.expected_collisions(s, perm, 2, lossy_only)
        assert got == pytest.approx(best_pairing_cost(s, lossy_only)), kinds
        checked += 1


def test_expected_collisions_matches_monte_carlo():
    X, _ = gen_synthetic(12, 20000, 1, 0.45, 0.25, correlation=0.0, seed=4)
    s = reorder.gather_stats([X])
    perm = np.random.default_rng(1).permutation(12)
    for T in (2, 4):
        Xp = X.data[:, perm]
        L = -(-12 // T)
        active = np.pad(Xp != 0, ((0, 0), (0, L * T - 12))).reshape(-1, T, L).sum(1)
        measured = (active >= 2).sum(1).mean()
        assert reorder.expected_collisions(s, perm, T) == pytest.approx(measured, rel=0.03)


def test_apply_permutation_preserves_product():
    X, W = gen_synthetic(16, 5, 3, 0.3, 0.3, seed=2)
    perm = np.random.default_rng(0).permutation(16)
    Xp, Wp = reorder.apply_permutation(X, W, perm)
    assert np.array_equal(reference_matmul(Xp, Wp), reference_matmul(X, W))
    with pytest.raises(ValueError):
        reorder.apply_permutation(X, W, [0] * 16)


def test_score_weights_change_ranking():
    s = ColumnStats(np.array([0.0, 0.5]), np.array([1.0, 0.0]), np.array([0.0, 0.5]), 1)
    assert ScoreWeights().score(s).tolist() == [0.0, 0.0]
    assert ScoreWeights(fits4=1.0).score(s).tolist() == [1.0, 0.0]


def test_permutation_file_roundtrip(tmp_path):
    p = tmp_path / "perm.json"
    reorder.save_permutation(np.array([2, 0, 1]), p)
    assert reorder.load_permutation(p).tolist() == [2, 0, 1]
    p.write_text(json.dumps([0, 0, 1]))
    with pytest.raises(ValueError):
        reorder.load_permutation(p)


def test_trivial_stats():
    s = reorder.gather_stats([np.zeros((3, 4), dtype=int)])
    assert s.p_zero.tolist() == [1.0] * 4
    s = reorder.gather_stats([np.array([[200, 0], [200, 5]])])
    assert s.p_wide[0] == 1.0


def test_wide_wide_zero_zero_pairs_across_blocks():
    s = pure_stats([2, 2, 0, 0])
    perm = reorder.compute_permutation(s, 2)
    groups = reorder._thread_groups(perm, 2)
    assert all(sorted(int(s.p_wide[c]) for c in g) == [0, 1] for g in groups)
    assert reorder.expected_collisions(s, perm, 2) == pytest.approx(best_pairing_cost(s, False)) == 0


def test_correlated_layer_has_fewer_collisions_after_reordering():
    X, _ = gen_synthetic(64, 4000, 1, 0.45, 0.2, correlation=0.9, seed=21)
    s = reorder.gather_stats([X])
    perm = reorder.compute_permutation(s, 2)

    def measured(p):
        Xp = X.data[:, p]
        return ((Xp[:, :32] != 0) & (Xp[:, 32:] != 0)).sum(1).mean()

    ident = np.arange(64)
    assert reorder.expected_collisions(s, perm, 2) < reorder.expected_collisions(s, ident, 2)
    assert measured(perm) < measured(ident)


def test_reversal_permutation_preserves_product():
    X, W = gen_synthetic(20, 6, 4, 0.3, 0.3, seed=1)
    Xp, Wp = reorder.apply_permutation(X, W, np.arange(20)[::-1])
    assert np.array_equal(reference_matmul(Xp, Wp), reference_matmul(X, W))
    Xi, Wi = reorder.apply_permutation(X, W, np.arange(20))
    assert np.array_equal(Xi.data, X.data) and np.array_equal(Wi.data, W.data)


def test_reordering_lowers_mse_on_correlated_tile():
    from sysmt.experiment import WorkloadParams, calibrate, run_layer
    from sysmt.pe_core import Strategy
    from sysmt.systolic import GridConfig
    params = WorkloadParams(128, 64, 32, 0.5, 0.15, correlation=0.9)
    X, W = params.generate(3)
    grid = GridConfig(threads=2, strategy=Strategy.parse("S+A"))
    perm = calibrate(params, 2, 4, seed=3)
    assert run_layer(X, W, grid, perm).mse < run_layer(X, W, grid).mse
