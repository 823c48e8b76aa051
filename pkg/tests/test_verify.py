import numpy as np
import pytest
from hypothesis import given, strategies as st

from dvis import tinynet, verify
from dvis.discretize import CandidateSegment
from dvis.grid import GroundTruthMap
from dvis.verify import (Detection, VerifyConfig, accept, bounding_box, combined_score, crop_resize,
                         extract_roi, head_loss_grad, make_detection, train_head, verify_forward,
                         verify_train_targets)

CFG = VerifyConfig()


def seg(mask, mean=2.0):
    return CandidateSegment(mask=mask, mean_label=mean, bandwidth=0.9)


def test_bounding_box_expansion_and_clip():
    m = np.zeros((20, 20), bool)
    m[5:15, 0:10] = True
    assert bounding_box(m) == (4.0, 0.0, 16.0, 11.0)


def test_crop_whole_image_is_plain_resize():
    rng = np.random.default_rng(0)
    img = rng.random((8, 8, 3))
    full = crop_resize(img, (0.0, 0.0, 8.0, 8.0), 8)
    assert np.allclose(full, img)
    m = np.ones((8, 8), bool)
    block = extract_roi(img, np.full((8, 8), 2.0), seg(m), VerifyConfig(roi_size=8))
    # bbox of the whole image grown by 10% then clipped is the image itself
    assert np.allclose(block[:3], np.transpose(img, (2, 0, 1)))


def test_constant_image_constant_channels():
    img = np.full((16, 16, 3), 0.3)
    m = np.zeros((16, 16), bool)
    m[4:9, 3:12] = True
    block = extract_roi(img, np.zeros((16, 16)), seg(m), CFG)
    assert block.shape == (5, 14, 14)
    assert np.allclose(block[:3], 0.3)


def test_bilinear_hand_values():
    a = np.array([[0.0, 1.0], [2.0, 3.0]])
    out = crop_resize(a, (0.0, 0.0, 2.0, 2.0), 4)
    assert out[0, 0] == 0.0
    assert out[1, 1] == pytest.approx(0.75)
    assert out[3, 3] == 3.0
    # row 2 samples y = 0.75, x = 0.25: (1-.75)(1-.25)*0 + (1-.75)(.25)*1 + .75(1-.25)*2 + .75*.25*3
    assert out[2, 1] == pytest.approx(0.25 * 0.25 * 1 + 0.75 * 0.75 * 2 + 0.75 * 0.25 * 3)


def test_zero_head_uniform_probabilities():
    p = tinynet.init(CFG.head)
    for k in p:
        p[k][...] = 0
    probs, s_iou, _, _ = verify_forward(p, np.random.default_rng(0).random((5, 14, 14)), CFG)
    assert np.allclose(probs, 1 / (CFG.num_classes + 1)) and s_iou == 0.0


@given(st.integers(0, 1000))
def test_probabilities_sum_to_one(seed):
    cfg = VerifyConfig(init_seed=seed)
    probs, s_iou, _, _ = verify_forward(tinynet.init(cfg.head), np.random.default_rng(seed).random((5, 14, 14)), cfg)
    assert abs(probs.sum() - 1) <= 1e-6 and 0 <= s_iou <= 1


def test_s_iou_clamp():
    p = tinynet.init(CFG.head)
    last = [k for k in p if k.endswith(".b")][-1]
    p[last.replace(".b", ".w")][...] = 0
    p[last][-1] = 1.7
    _, s_iou, out, _ = verify_forward(p, np.zeros((5, 14, 14)), CFG)
    assert out[-1] == pytest.approx(1.7) and s_iou == 1.0


def gt_square():
    ids = np.zeros((10, 10), int)
    ids[2:6, 2:6] = 4
    ids[7:10, 7:10] = 9
    return GroundTruthMap(ids, {4: 2, 9: 3})


def test_train_targets_examples():
    gt = gt_square()
    exact = seg(gt.mask(4))
    far = np.zeros((10, 10), bool)
    far[0, 9] = True
    half = np.zeros((10, 10), bool)
    half[2:4, 2:6] = True
    t = verify_train_targets([exact, seg(far), seg(half)], gt, CFG)
    assert t[0] == (2, 1.0)
    assert t[1] == (0, 0.0)
    assert t[2][1] == 0.5 and t[2][0] == 2


def test_train_targets_tie_smallest_id():
    ids = np.zeros((4, 4), int)
    ids[0, 0:2] = 5
    ids[1, 0:2] = 2
    gt = GroundTruthMap(ids, {5: 1, 2: 3})
    m = np.zeros((4, 4), bool)
    m[0:2, 0:2] = True
    assert verify_train_targets([seg(m)], gt, CFG)[0] == (3, 0.5)


def test_accept_examples():
    dets = [make_detection(np.ones((2, 2), bool), np.array(p), s, CFG)
            for p, s in [([0.1, 0.9, 0, 0], 0.2), ([0.7, 0.3, 0, 0], 0.9), ([0, 0.5, 0.5, 0], 0.6)]]
    assert [d.label for d in accept(dets, VerifyConfig(accept_threshold=0.0))] == [1, 1]
    assert accept(dets, VerifyConfig(accept_threshold=1.0 + 1e-9)) == []
    only_iou = VerifyConfig(alpha=1.0, accept_threshold=0.5)
    kept = accept([make_detection(d.mask, d.probs, d.s_iou, only_iou) for d in dets], only_iou)
    assert [d.s_iou for d in kept] == [0.6]


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.5))
def test_score_monotone(a, s_cls, s_iou, d):
    base = combined_score(s_cls, s_iou, a)
    assert combined_score(min(s_cls + d, 1), s_iou, a) >= base - 1e-15
    assert combined_score(s_cls, min(s_iou + d, 1), a) >= base - 1e-15


def test_head_loss_gradient_fd():
    out = np.array([0.3, -1.2, 0.8, 0.1, 0.42])
    for cls, iou in [(2, 0.9), (0, 0.4), (1, 0.45)]:
        _, g = head_loss_grad(out, cls, iou)
        for i in range(out.size):
            e = np.zeros_like(out)
            e[i] = 1e-6
            num = (head_loss_grad(out + e, cls, iou)[0] - head_loss_grad(out - e, cls, iou)[0]) / 2e-6
            assert g[i] == pytest.approx(num, rel=1e-5, abs=1e-8)


def test_train_head_learns_separable_toy():
    rng = np.random.default_rng(0)
    samples = []
    for i in range(24):
        cls = 1 + i % 2
        block = rng.normal(0, 0.1, (5, 8, 8))
        block[0] += 1.0 if cls == 1 else -1.0
        samples.append((block, cls, 0.8))
    cfg = VerifyConfig(roi_size=8, num_classes=2, epochs=25, lr=3e-3)
    p = train_head(samples, cfg)
    hits = sum(int(np.argmax(verify_forward(p, b, cfg)[0]) == c) for b, c, _ in samples)
    assert hits == len(samples)


def test_detection_score_invariant():
    d = make_detection(np.ones((2, 2), bool), np.array([0.2, 0.5, 0.3, 0.0]), 0.8, CFG)
    assert isinstance(d, Detection) and d.label == 1
    assert d.score == pytest.approx(CFG.alpha * 0.8 + (1 - CFG.alpha) * 0.5)


def test_dihedral_group():
    block = np.arange(2 * 4 * 4, dtype=float).reshape(2, 4, 4)
    outs = [verify.dihedral(block, k) for k in range(8)]
    assert np.array_equal(outs[0], block)
    assert len({o.tobytes() for o in outs}) == 8
    for o in outs:
        assert o.shape == block.shape and np.array_equal(np.sort(o, axis=None), np.sort(block, axis=None))
        # channels move together
        assert np.array_equal(o[1] - o[0], np.full((4, 4), 16.0))


def test_verify_predict_tta_is_invariant():
    cfg = verify.VerifyConfig(num_classes=3)
    params = tinynet.init(cfg.head)
    rng = np.random.default_rng(0)
    block = rng.random((cfg.image_channels + 2, cfg.roi_size, cfg.roi_size))
    p0, s0 = verify.verify_predict(params, block, cfg)
    for k in range(8):
        pk, sk = verify.verify_predict(params, verify.dihedral(block, k), cfg)
        np.testing.assert_allclose(pk, p0, atol=1e-12)
        assert abs(sk - s0) < 1e-12
    assert abs(p0.sum() - 1.0) < 1e-12
    plain = verify.VerifyConfig(num_classes=3, test_time_augment=False)
    p1, s1 = verify.verify_predict(params, block, plain)
    p2, s2, _, _ = verify.verify_forward(params, block, plain)
    np.testing.assert_array_equal(p1, p2)
    assert s1 == s2


def _det(mask, label, score):
    return Detection(mask=mask, label=label, s_cls=score, s_iou=score, score=score)


def test_suppress_worked_example():
    a = np.zeros((6, 6), bool); a[0:4, 0:4] = True   # 16 px
    b = np.zeros((6, 6), bool); b[0:4, 1:4] = True   # 12 px inside a, IoU 0.75
    c = np.zeros((6, 6), bool); c[4:6, 4:6] = True
    dets = [_det(b, 1, 0.6), _det(a, 1, 0.9), _det(a, 2, 0.5), _det(c, 1, 0.7)]
    kept = verify.suppress(dets, 0.5)
    assert [(d.label, d.score) for d in kept] == [(1, 0.9), (1, 0.7), (2, 0.5)]
    assert len(verify.suppress(dets, 0.8)) == 4
    assert [d.score for d in verify.suppress(dets, 1.0)] == [0.9, 0.7, 0.6, 0.5]


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(1, 4), st.integers(1, 4),
                          st.integers(1, 2), st.floats(0, 1)), min_size=0, max_size=8),
       st.floats(0.0, 0.99))
def test_suppress_properties(boxes, thr):
    dets = []
    for y, x, h, w, label, score in boxes:
        m = np.zeros((8, 8), bool)
        m[y:y + h, x:x + w] = True
        dets.append(_det(m, label, score))
    kept = verify.suppress(dets, thr)
    assert all(any(k is d for d in dets) for k in kept)
    assert [k.score for k in kept] == sorted((k.score for k in kept), reverse=True)
    for i, p in enumerate(kept):
        for q in kept[i + 1:]:
            assert p.label != q.label or verify.mask_iou(p.mask, q.mask) <= thr
    # every dropped detection is covered by a higher-or-equal scoring kept one
    for d in dets:
        if not any(k is d for k in kept):
            assert any(k.label == d.label and k.score >= d.score
                       and verify.mask_iou(k.mask, d.mask) > thr for k in kept)
    assert [k.score for k in verify.suppress(kept, thr)] == [k.score for k in kept]


def test_train_heads_are_seeded_apart_and_averaged():
    cfg = verify.VerifyConfig(num_classes=2, epochs=1, heads=3, test_time_augment=False)
    rng = np.random.default_rng(1)
    samples = [(rng.random((5, 14, 14)), int(rng.integers(3)), float(rng.random())) for _ in range(6)]
    heads = verify.train_heads(samples, cfg)
    assert len(heads) == 3
    assert not np.array_equal(heads[0]["0.w"], heads[1]["0.w"])
    single = verify.train_head(samples, cfg)
    assert all(np.array_equal(single[k], heads[0][k]) for k in single)
    block = samples[0][0]
    outs = [verify.verify_predict(h, block, cfg) for h in heads]
    probs, s_iou = verify.verify_predict(heads, block, cfg)
    np.testing.assert_allclose(probs, np.mean([o[0] for o in outs], axis=0), atol=1e-15)
    assert abs(s_iou - np.mean([o[1] for o in outs])) < 1e-15
    with pytest.raises(ValueError):
        verify.VerifyConfig(heads=0)
