import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latch.datasets import LabeledPairSet
from latch.descriptor import describe_windows
from latch.image import Window
from latch.learning import (BitMatrix, CandidatePool, format_report, generate_candidates, greedy_decorrelate,
                            learn, pearson_bit_correlation, quality_score, quality_scores, response_bits,
                            select_combined, select_proposed, select_random, select_unsupervised)
from latch.rng import Xoshiro256, splitmix64

from oracles import greedy_loop, pearson_loop, quality_loop, triplet_bit_loop


def test_splitmix64_reference_values():
    state, out = splitmix64(0)
    assert out == 0xE220A8397B1DCDAF
    state, out = splitmix64(state)
    assert out == 0x6E789E6AA1B965F4


def test_xoshiro_determinism_and_ranges():
    a, b = Xoshiro256(42), Xoshiro256(42)
    assert [a.next_u64() for _ in range(5)] == [b.next_u64() for _ in range(5)]
    r = Xoshiro256(1)
    vals = [r.integers(-3, 3) for _ in range(2000)]
    assert set(vals) == set(range(-3, 4))
    s = Xoshiro256(7).sample(10, 10)
    assert sorted(s) == list(range(10))
    with pytest.raises(ValueError):
        Xoshiro256(0).sample(3, 4)


def test_candidates():
    one = generate_candidates(1, seed=5)
    assert np.array_equal(one.offsets, generate_candidates(1, seed=5).offsets)
    pool = generate_candidates(2000, 7, 48, seed=3)
    assert np.abs(pool.offsets).max() <= 24 - 4
    a, p1, p2 = pool.offsets[:, 0:2], pool.offsets[:, 2:4], pool.offsets[:, 4:6]
    assert not ((a == p1).all(1) | (a == p2).all(1) | (p1 == p2).all(1)).any()
    assert len({tuple(r) for r in pool.offsets}) == 2000
    assert np.array_equal(generate_candidates(50, seed=3).offsets, pool.offsets[:50])


@pytest.mark.slow
def test_candidates_full_scale_distinct():
    pool = generate_candidates(56000, 7, 48, seed=0)
    assert len({tuple(r) for r in pool.offsets}) == 56000


def _toy_pairs(n_windows=20, n_pairs=50, seed=0, constant=False):
    rng = np.random.default_rng(seed)
    if constant:
        w = np.full((n_windows, 64, 64), 77, np.uint8)
    else:
        w = rng.integers(0, 256, (n_windows, 64, 64), dtype=np.uint8)
    pairs = rng.integers(0, n_windows, (n_pairs, 2))
    labels = rng.random(n_pairs) < 0.5
    return LabeledPairSet(w, pairs, labels)


def test_response_bits_against_loop():
    ps = _toy_pairs()
    pool = generate_candidates(10, 7, 48, seed=1)
    bits = response_bits(pool, ps)
    crops = ps.crop(48)
    for c in range(10):
        row = bits.row(c)
        for w in range(20):
            assert row[w] == triplet_bit_loop(crops[w], pool.offsets[c], 7)
    # the descriptor path agrees cell by cell
    desc = np.unpackbits(describe_windows(crops, pool.arrangement(np.arange(8))), axis=1, bitorder="little")
    for c in range(8):
        assert np.array_equal(desc[:, c].astype(bool), bits.row(c))


def test_response_bits_constant_windows_and_threads():
    ps = _toy_pairs(constant=True)
    pool = generate_candidates(30, seed=2)
    bits = response_bits(pool, ps)
    assert bits.ones().sum() == 0
    ps = _toy_pairs(seed=4)
    assert np.array_equal(response_bits(pool, ps, threads=3, block=8).packed, response_bits(pool, ps).packed)


def test_quality_score_cases():
    ps = _toy_pairs()
    assert quality_score(np.zeros(20, bool), ps) == ps.n_same
    # windows 0..3: bit = window index parity; same pairs share parity
    pairs = np.array([[0, 2], [1, 3], [0, 1], [2, 3], [3, 0]])
    labels = np.array([True, True, False, False, False])
    toy = LabeledPairSet(np.zeros((4, 64, 64), np.uint8), pairs, labels)
    assert quality_score([0, 1, 0, 1], toy) == 5


def test_quality_scores_against_recount():
    ps = _toy_pairs(n_windows=30, n_pairs=50, seed=3)
    pool = generate_candidates(8, seed=9)
    bits = response_bits(pool, ps)
    got = quality_scores(bits, ps)
    for c in range(8):
        row = bits.row(c)
        assert got[c] == quality_loop(row, ps.pairs, ps.labels) == quality_score(row, ps)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_quality_complement_invariance(seed):
    rng = np.random.default_rng(seed)
    ps = LabeledPairSet(np.zeros((25, 64, 64), np.uint8), rng.integers(0, 25, (40, 2)), rng.random(40) < 0.5)
    b = rng.random(25) < 0.5
    assert quality_score(b, ps) == quality_score(~b, ps)


def test_pearson_cases():
    a = np.array([1, 0, 1, 1, 0, 0, 1])
    assert pearson_bit_correlation(a, a) == pytest.approx(1.0)
    assert pearson_bit_correlation(a, 1 - a) == pytest.approx(-1.0)
    assert pearson_bit_correlation([1, 1, 0, 0], [1, 0, 1, 0]) == 0.0
    assert pearson_bit_correlation([1, 1, 1], [0, 1, 0]) == 0.0
    with pytest.raises(ValueError):
        pearson_bit_correlation([1, 0], [1, 0, 1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=2, max_size=50))
def test_pearson_oracle(rows):
    a, b = zip(*rows)
    assert pearson_bit_correlation(a, b) == pytest.approx(pearson_loop(a, b), abs=1e-12)


def _bits_from_rows(rows):
    rows = np.asarray(rows, dtype=bool)
    return BitMatrix(np.packbits(rows, axis=1, bitorder="little"), rows.shape[1])


def _pool(n):
    return CandidatePool(generate_candidates(n, seed=0).offsets)


def test_combined_filter_cases():
    rng = np.random.default_rng(0)
    rows = rng.random((10, 40)) < 0.5
    bits = _bits_from_rows(rows)
    scores = rng.integers(0, 100, 10)
    top = select_proposed(_pool(10), scores, 4).indices
    assert np.array_equal(select_combined(_pool(10), bits, scores, 4, tau=1.01).indices, top)
    a = np.tile([1, 1, 0, 0], 10)
    same = np.array([a, a, np.tile([1, 0, 1, 0], 10)])  # rows 0 and 2 have correlation 0
    sel = select_combined(_pool(3), _bits_from_rows(same), np.array([5, 4, 3]), 2, 0.2)
    assert sel.indices.tolist() == [0, 2]
    sel = select_combined(_pool(10), bits, scores, 4, tau=0.0)
    assert sel.relaxed and sel.n_decorrelated == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.2, 0.35]))
def test_combined_greedy_oracle(seed, tau):
    rng = np.random.default_rng(seed)
    rows = rng.random((40, 30)) < rng.uniform(0.2, 0.8, (40, 1))
    scores = rng.integers(0, 12, 40)
    sel = select_combined(_pool(40), _bits_from_rows(rows), scores, 8, tau)
    order = sorted(range(40), key=lambda i: (-scores[i], i))
    want, relaxed = greedy_loop(order, rows.astype(int).tolist(), 8, tau)
    assert sel.indices.tolist() == want and sel.relaxed == relaxed


def test_proposed_cases():
    scores = np.array([3, 9, 9, 1, 5])
    assert select_proposed(_pool(5), scores, 5).indices.tolist() == [1, 2, 4, 0, 3]
    assert select_proposed(_pool(5), np.zeros(5), 3).indices.tolist() == [0, 1, 2]
    rng = np.random.default_rng(1)
    s = rng.integers(0, 5, 30)
    assert select_proposed(_pool(30), s, 10).indices.tolist() == sorted(range(30), key=lambda i: (-s[i], i))[:10]


def test_unsupervised_cases():
    rows = np.zeros((4, 10), bool)
    rows[1, :5] = True            # exactly half ones
    rows[2, :3] = True
    rows[3, 2:9] = True
    sel = select_unsupervised(_pool(4), _bits_from_rows(rows), 4, tau=1.01)
    assert sel.indices[0] == 1 and sel.indices[-1] == 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_unsupervised_oracle(seed):
    rng = np.random.default_rng(seed)
    rows = rng.random((20, 24)) < rng.uniform(0.1, 0.9, (20, 1))
    sel = select_unsupervised(_pool(20), _bits_from_rows(rows), 6, 0.2)
    order = sorted(range(20), key=lambda i: (abs(2 * int(rows[i].sum()) - 24), i))
    want, relaxed = greedy_loop(order, rows.astype(int).tolist(), 6, 0.2)
    assert sel.indices.tolist() == want and sel.relaxed == relaxed


def test_random_selection():
    sel = select_random(_pool(10), 10, seed=3)
    assert sorted(sel.indices.tolist()) == list(range(10))
    assert select_random(_pool(30), 5, seed=8).indices.tolist() == select_random(_pool(30), 5, seed=8).indices.tolist()


def test_random_selection_uniform():
    # 10k draws of one candidate from 10: every count within 3 sigma of 1000
    counts = np.zeros(10, int)
    r = Xoshiro256(11)
    for _ in range(10000):
        counts[r.sample(10, 1)[0]] += 1
    sigma = np.sqrt(10000 * 0.1 * 0.9)
    assert np.all(np.abs(counts - 1000) <= 3 * sigma)
    # and through select_random with varying seeds
    counts[:] = 0
    for s in range(10000):
        counts[select_random(_pool(10), 1, seed=s).indices[0]] += 1
    assert np.all(np.abs(counts - 1000) <= 3 * sigma)


def test_greedy_relaxation_fills_in_order():
    rows = np.ones((5, 8), bool)
    rows[:, 0] = False
    idx, relaxed, n_ok = greedy_decorrelate(np.arange(5), _bits_from_rows(rows), 3, 0.2)
    assert idx.tolist() == [0, 1, 2] and relaxed and n_ok == 1


def test_learn_end_to_end():
    ps = _toy_pairs(n_windows=40, n_pairs=60, seed=6)
    for strategy in ("random", "unsupervised", "proposed", "combined"):
        res = learn(ps, strategy, n_candidates=64, T=16, seed=2)
        assert len(res.arrangement) == 16
        assert len(res.selection.indices) == len(set(res.selection.indices.tolist()))
        text = format_report(res)
        assert f"# strategy {strategy}" in text
    again = learn(ps, "combined", n_candidates=64, T=16, seed=2)
    assert again.arrangement == learn(ps, "combined", n_candidates=64, T=16, seed=2).arrangement
    with pytest.raises(ValueError):
        learn(ps, "bogus")
    with pytest.raises(ValueError):
        learn(ps, "proposed", n_candidates=8, T=16)
