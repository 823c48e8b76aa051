import numpy as np
import pytest
from hypothesis import given, strategies as st

from dvis.grid import DimensionError, GroundTruthMap
from dvis.metrics import (Prediction, ap_from_ranked, average_precision, boundary, contour_f1,
                          evaluate, mask_iou)
from oracles import ap_by_cutpoints


def square(shape, y0, x0, s):
    m = np.zeros(shape, bool)
    m[y0:y0 + s, x0:x0 + s] = True
    return m


def test_mask_iou_examples():
    a = square((4, 4), 0, 0, 2)
    assert mask_iou(a, a) == 1.0
    assert mask_iou(a, square((4, 4), 2, 2, 2)) == 0.0
    assert mask_iou(a, square((4, 4), 0, 1, 2)) == pytest.approx(2 / 6)
    assert mask_iou(np.zeros((2, 2), bool), np.zeros((2, 2), bool)) == 0.0
    with pytest.raises(DimensionError):
        mask_iou(a, np.zeros((3, 3), bool))


def one_gt(masks, cls=1):
    ids = np.zeros(masks[0].shape, int)
    for i, m in enumerate(masks, 1):
        ids[m] = i
    return GroundTruthMap(ids, {i: cls for i in range(1, len(masks) + 1)})


def test_ap_examples():
    g = square((8, 8), 0, 0, 3)
    gt = one_gt([g])
    assert average_precision([[Prediction(g, 1, 0.9)]], [gt], 0.5, 1) == 1.0
    assert average_precision([[]], [gt], 0.5, 1) == 0.0
    g2 = square((8, 8), 4, 4, 3)
    gt = one_gt([g, g2])
    dets = [[Prediction(g, 1, 0.9), Prediction(square((8, 8), 0, 5, 2), 1, 0.8), Prediction(g2, 1, 0.7)]]
    assert average_precision(dets, [gt], 0.5, 1) == pytest.approx(0.5 + 0.5 * 2 / 3, abs=1e-15)


def test_ap_from_ranked_envelope():
    assert ap_from_ranked([False, True], 1) == 0.5
    assert ap_from_ranked([], 3) == 0.0
    assert ap_from_ranked([True], 0) == 0.0


@st.composite
def ap_instance(draw):
    shape = (6, 6)
    n_img = draw(st.integers(1, 2))
    dets, gts, gts_o, dets_o = [], [], [], []
    for _ in range(n_img):
        n_gt = draw(st.integers(0, 4))
        ids = np.zeros(shape, int)
        cls = {}
        for i in range(1, n_gt + 1):
            y, x, s = draw(st.integers(0, 4)), draw(st.integers(0, 4)), draw(st.integers(1, 2))
            ids[y:y + s, x:x + s] = i
            cls[i] = draw(st.integers(1, 2))
        gt = GroundTruthMap(ids, {i: c for i, c in cls.items()})
        gts.append(gt)
        gts_o.append([(gt.mask(i), gt.classes[i]) for i in gt.instance_ids()])
        ds, do = [], []
        for _ in range(draw(st.integers(0, 6))):
            y, x, s = draw(st.integers(0, 4)), draw(st.integers(0, 4)), draw(st.integers(1, 3))
            m = square(shape, y, x, s)
            lab = draw(st.integers(1, 2))
            score = draw(st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9]))
            ds.append(Prediction(m, lab, score))
            do.append((m, lab, score))
        dets.append(ds)
        dets_o.append(do)
    return dets, gts, dets_o, gts_o


@given(ap_instance(), st.sampled_from([0.5, 0.7, 0.9]), st.integers(1, 2))
def test_ap_matches_cutpoint_oracle(inst, thr, label):
    dets, gts, dets_o, gts_o = inst
    assert abs(average_precision(dets, gts, thr, label) - ap_by_cutpoints(dets_o, gts_o, thr, label)) <= 1e-12


@given(ap_instance(), st.integers(1, 2))
def test_ap_monotone_in_threshold(inst, label):
    dets, gts, _, _ = inst
    aps = [average_precision(dets, gts, t, label) for t in (0.5, 0.6, 0.7, 0.8, 0.9)]
    assert all(a >= b - 1e-15 for a, b in zip(aps, aps[1:]))


def test_boundary_counts_image_edge():
    m = np.ones((3, 3), bool)
    b = boundary(m)
    assert b.sum() == 8 and not b[1, 1]


def test_contour_examples():
    m = square((12, 12), 3, 3, 5)
    gt = one_gt([m])
    for tol in (1, 5, 10):
        assert contour_f1([[Prediction(m, 1)]], [gt], tol) == 1.0
    assert contour_f1([[]], [gt], 1) == 0.0
    shifted = square((12, 12), 3, 4, 5)
    assert contour_f1([[Prediction(shifted, 1)]], [gt], 1) == 1.0
    assert contour_f1([[Prediction(shifted, 1)]], [gt], 0) < 1.0


def test_contour_empty_both_sides():
    gt = GroundTruthMap(np.zeros((4, 4), int), {})
    assert contour_f1([[]], [gt], 1) == 1.0


@given(st.integers(0, 2**31))
def test_contour_monotone_in_tolerance(seed):
    rng = np.random.default_rng(seed)
    m = square((16, 16), *rng.integers(0, 8, 2), int(rng.integers(3, 8)))
    p = square((16, 16), *rng.integers(0, 8, 2), int(rng.integers(3, 8)))
    gt = one_gt([m])
    vals = [contour_f1([[Prediction(p, 1)]], [gt], t) for t in (0, 1, 2, 5, 10)]
    assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))


def test_metrics_permutation_invariant():
    a, b = square((10, 10), 0, 0, 4), square((10, 10), 5, 5, 4)
    ids = np.zeros((10, 10), int)
    ids[a], ids[b] = 1, 2
    g1 = GroundTruthMap(ids, {1: 1, 2: 2})
    ids2 = np.where(ids == 1, 7, np.where(ids == 2, 3, 0))
    g2 = GroundTruthMap(ids2, {7: 1, 3: 2})
    dets = [[Prediction(a, 1, 0.9), Prediction(square((10, 10), 5, 4, 4), 2, 0.6)]]
    assert evaluate(dets, [g1]) == evaluate(dets, [g2])


def test_evaluate_perfect():
    a, b = square((10, 10), 0, 0, 4), square((10, 10), 5, 5, 4)
    gt = one_gt([a, b])
    rep = evaluate([[Prediction(a, 1), Prediction(b, 1)]], [gt])
    assert all(v == 1.0 for v in rep["map"].values()) and rep["ap_avg"] == 1.0
