import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wssgg.evaluation import GroundTruthTriplet, iou, recall_at_k, relation_frequency, write_histogram, write_report
from wssgg.textgraph import TextGraph, Vocab

A = (0.0, 0.0, 10.0, 10.0)
B = (20.0, 0.0, 30.0, 10.0)


def gt(s, p, o, sb=A, ob=B):
    return GroundTruthTriplet(s, p, o, sb, ob)


def test_iou_examples():
    assert iou(A, A) == 1.0
    assert iou(A, B) == 0.0
    assert abs(iou([0, 0, 10, 10], [5, 0, 15, 10]) - 1 / 3) < 1e-12
    assert abs(iou([0, 0, 4, 4], [2, 2, 6, 6]) - 4 / 28) < 1e-12
    with pytest.raises(ValueError):
        iou([0, 0, 0, 5], A)


box_st = st.tuples(st.floats(0, 50), st.floats(0, 50), st.floats(1, 50), st.floats(1, 50)).map(
    lambda t: (t[0], t[1], t[0] + t[2], t[1] + t[3])
)


@given(box_st, box_st)
def test_iou_symmetric_and_bounded(a, b):
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0
    assert iou(a, a) == 1.0


def test_recall_examples():
    gts = [gt(0, 1, 2), gt(3, 0, 4)]
    assert recall_at_k([(A, B, 0, 1, 2)], gts, 50) == 0.5
    assert recall_at_k([(A, B, 0, 1, 2)] * 3, [gt(0, 1, 2)] + [gt(5, 5, 5)], 50) == 0.5
    assert recall_at_k([], gts, 50) == 0.0
    assert recall_at_k([], [], 50) == 1.0
    # right labels, wrong rank cut-off
    assert recall_at_k([(A, B, 9, 9, 9), (A, B, 0, 1, 2)], gts, 1) == 0.0


def test_iou_boundary():
    # subject box widened so IoU with A is exactly 0.50, then 0.49
    at = (0.0, 0.0, 20.0, 10.0)
    below = (0.0, 0.0, 10.0 / 0.49, 10.0)
    assert iou(at, A) == 0.5 and abs(iou(below, A) - 0.49) < 1e-12
    assert recall_at_k([(at, B, 0, 1, 2)], [gt(0, 1, 2)], 1) == 1.0
    assert recall_at_k([(below, B, 0, 1, 2)], [gt(0, 1, 2)], 1) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_recall_monotone_bounded_and_gt_order_free(seed):
    rng = np.random.default_rng(seed)
    boxes = [A, B, (0.0, 20.0, 10.0, 30.0)]
    gts = [gt(*rng.integers(2, size=3), boxes[rng.integers(3)], boxes[rng.integers(3)]) for _ in range(4)]
    preds = [(boxes[rng.integers(3)], boxes[rng.integers(3)], *rng.integers(2, size=3)) for _ in range(10)]
    rs = [recall_at_k(preds, gts, k) for k in range(11)]
    assert all(0 <= r <= 1 for r in rs) and rs == sorted(rs)
    perm = rng.permutation(4)
    # permuting GT can change which GT a prediction consumes, but not how many are matched
    assert recall_at_k(preds, [gts[i] for i in perm], 10) == rs[10]


def test_relation_frequency(tmp_path):
    vocab = Vocab(["x"], ["on", "of", "has"])
    assert [r[1] for r in relation_frequency([], vocab)] == [0, 0, 0]
    g = TextGraph([0, 0], [(0, 0, 1), (0, 1, 0), (1, 0, 1)])
    rows = relation_frequency([g], vocab)
    assert rows == [("on", 2, 2 / 3), ("of", 1, 1 / 3), ("has", 0, 0.0)]
    both = dict((n, c) for n, c, _ in relation_frequency([g, g], vocab))
    assert both == {n: 2 * c for n, c, _ in rows}
    path = tmp_path / "h.csv"
    write_histogram(path, rows)
    assert path.read_text().splitlines()[:2] == ["class,count,fraction", "on,2,0.666667"]


def test_report_macro_micro_and_missing(tmp_path):
    rows = [("a", 1, {50: 1.0}), ("b", 3, {50: 1 / 3}), ("c", 0, {50: 1.0})]
    macro, micro = write_report(tmp_path / "r.tsv", rows, (50,), missing=["d"])
    assert macro[50] == pytest.approx(2 / 3) and micro[50] == pytest.approx(0.5)
    text = (tmp_path / "r.tsv").read_text()
    assert "macro_avg\t2\t0.666667" in text and text.rstrip().endswith("missing predictions: d")
