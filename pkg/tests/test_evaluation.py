import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latch.datasets import Homography, LabeledPairSet, OxfordSet
from latch.descriptor import ExtractOptions, default_arrangement, extract
from latch.detector import Keypoint, harris_detect
from latch.evaluation import (EvaluationError, format_pr_csv, format_roc_csv, learn_threshold, match_pair,
                              oxford_eval, pr_curve, roc_curve, roc_metrics, verify_pairs)
from latch.image import GrayImage
from latch.matching import hamming

from oracles import auc_mann_whitney, best_threshold_loop, err95_loop, roc_points
from test_descriptor import smooth_texture

ROWS20 = [(3, 1), (5, 1), (7, 0), (2, 1), (9, 0), (5, 0), (4, 1), (12, 0), (6, 1), (8, 0),
          (5, 1), (11, 0), (1, 1), (6, 0), (10, 0), (3, 1), (7, 1), (13, 0), (4, 0), (2, 1)]


def test_roc_separated():
    m = roc_metrics([1, 2, 3, 10, 11, 12], [1, 1, 1, 0, 0, 0])
    assert (m.auc, m.accuracy, m.err95) == (1.0, 1.0, 0.0)


def test_roc_all_equal():
    m = roc_metrics([4] * 10, [1, 1, 1, 0, 0, 0, 0, 0, 0, 0])
    assert m.auc == pytest.approx(0.5)
    assert m.accuracy == pytest.approx(0.7)


def test_roc_hand_listed_rows():
    d, y = zip(*ROWS20)
    y = [bool(v) for v in y]
    m = roc_metrics(list(zip(d, y)))
    assert m.auc == pytest.approx(auc_mann_whitney(d, y))
    assert m.err95 == pytest.approx(err95_loop(d, y))
    assert m.best_accuracy == pytest.approx(best_threshold_loop(d, y)[1])
    c = roc_curve(d, y)
    pts = roc_points(d, y)
    assert np.allclose(c.fpr, [p[1] for p in pts]) and np.allclose(c.tpr, [p[2] for p in pts])
    assert format_roc_csv(c).splitlines()[0] == "threshold,fpr,tpr"


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 30), st.booleans()), min_size=2, max_size=50))
def test_roc_oracle(rows):
    d, y = zip(*rows)
    if all(y) or not any(y):
        with pytest.raises(EvaluationError):
            roc_metrics(d, y)
        return
    m = roc_metrics(d, y)
    assert m.auc == pytest.approx(auc_mann_whitney(d, y))
    assert m.err95 == pytest.approx(err95_loop(d, y))
    t, acc = best_threshold_loop(d, y)
    assert learn_threshold(d, y) == t
    assert m.best_accuracy == pytest.approx(acc)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 40), st.booleans()), min_size=2, max_size=50))
def test_roc_rank_invariance(rows):
    d, y = zip(*rows)
    if all(y) or not any(y):
        return
    a = roc_metrics(d, y)
    for f in (lambda v: 3 * v + 7, lambda v: math.exp(v / 10), lambda v: v ** 3):
        b = roc_metrics([f(v) for v in d], y)
        assert b.auc == pytest.approx(a.auc) and b.err95 == pytest.approx(a.err95)
        assert b.best_accuracy == pytest.approx(a.best_accuracy)


def test_learn_threshold_cases():
    assert learn_threshold([3, 10], [True, False]) == 3
    assert learn_threshold([1, 2, 5, 8, 9], [1, 1, 1, 0, 0]) == 5
    assert learn_threshold([5, 6], [False, True]) == 4   # predicting nothing 'same' is as good as anything
    m = roc_metrics([1, 2, 8, 9], [1, 1, 0, 0], threshold=1)
    assert m.accuracy == 0.75 and m.best_accuracy == 1.0
    with pytest.raises(EvaluationError):
        learn_threshold([], [])


def test_verify_pairs():
    rng = np.random.default_rng(0)
    w = rng.integers(0, 256, (30, 64, 64), dtype=np.uint8)
    w[1] = w[0]
    pairs = np.r_[[[0, 1]], rng.integers(0, 30, (99, 2))]
    ps = LabeledPairSet(w, pairs, rng.random(100) < 0.5)
    d, y = verify_pairs(ps, default_arrangement())
    assert d[0] == 0 and d.max() <= 512
    d32, _ = verify_pairs(ps, default_arrangement(), ExtractOptions())
    assert d32.max() <= 256
    # compose extraction and hamming by hand; the centered 48-px window of a 64x64 patch sits around (32, 32)
    arrs = default_arrangement()
    kp = Keypoint(32, 32)
    for i in range(100):
        a, b = ps.pairs[i]
        da = extract(GrayImage(w[a]), [kp], arrs)[0].bits
        db = extract(GrayImage(w[b]), [kp], arrs)[0].bits
        assert d32[i] == hamming(da, db)


def test_pr_curve_and_auc():
    d1 = np.array([0, 0, 1, 3, 5])
    correct = np.array([True, True, False, True, False])
    c = pr_curve(d1, correct, n_gt=4, n_bits=8)
    assert c.thresholds.tolist() == [0, 1, 2, 3, 4, 5, 6, 7, 8]
    assert c.recall[0] == 0.5 and c.one_minus_precision[0] == 0.0
    assert c.recall[-1] == 0.75 and c.one_minus_precision[-1] == pytest.approx(0.4)
    assert 0 < c.auc() <= 1
    assert format_pr_csv(c).splitlines()[:2] == ["threshold,recall,one_minus_precision", "0,0.500000,0.000000"]


def test_oxford_self_pair():
    img = smooth_texture(220, seed=3)
    ident = Homography(np.eye(3))
    kps = harris_detect(img, 300)
    c = match_pair(img, img, ident, default_arrangement(), ExtractOptions(), kps, kps)
    assert c.recall[0] == 1.0 and c.one_minus_precision[0] == 0.0
    assert c.max_recall_at_full_precision() == 1.0
    assert c.auc() == pytest.approx(1.0)
    ox = OxfordSet("self", [img] * 6, [ident] * 5)
    res = oxford_eval(ox, default_arrangement())
    assert res.mean_auc == pytest.approx(1.0)
    with pytest.raises(EvaluationError):
        shifted = Homography(np.array([[1, 0, 500], [0, 1, 0], [0, 0, 1]]))
        match_pair(img, img, shifted, default_arrangement(), ExtractOptions(), kps, kps)
