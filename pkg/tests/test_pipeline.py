import numpy as np

from dvis import pipeline, tinynet
from dvis.discretize import MeanShiftConfig
from dvis.grid import GroundTruthMap
from dvis.synthgen import SyntheticScene
from dvis.tinynet import NetConfig
from dvis.verify import VerifyConfig


def identity_model(**verify_kw):
    """A 1x1 conv that copies the first image channel into the label map."""
    net = NetConfig(layers=({"type": "conv", "kernel": 1, "out": 1, "stride": 1}, {"type": "relu"}),
                    input_channels=3, input_mean=0.0, input_std=1.0)
    params = tinynet.init(net)
    params["0.w"][:] = 0.0
    params["0.w"][0, 0] = 1.0
    params["0.b"][:] = 0.0
    return pipeline.Model(net, params, MeanShiftConfig(), VerifyConfig(epochs=2, **verify_kw))


def two_square_scene():
    img = np.zeros((24, 24, 3))
    ids = np.zeros((24, 24), dtype=np.int64)
    img[2:10, 2:10, 0] = 2.0
    ids[2:10, 2:10] = 1
    img[12:22, 12:22, 0] = 3.5
    ids[12:22, 12:22] = 2
    return SyntheticScene(img, GroundTruthMap(ids, {1: 1, 2: 2}))


def test_candidates_follow_label_plateaus():
    m = identity_model()
    s = two_square_scene()
    cands, full = pipeline.candidates(m, s.image)
    assert full.shape == (24, 24)
    masks = sorted((c.mask for c in cands), key=lambda x: x.sum())
    assert len(masks) == 2
    assert np.array_equal(masks[0], s.gt.mask(1)) and np.array_equal(masks[1], s.gt.mask(2))


def test_detect_without_head_passes_candidates_through():
    m = identity_model()
    f, dets = pipeline.detect(m, two_square_scene().image)
    assert f.shape == (24, 24)
    assert len(dets) == 2 and all(d.label == 1 and d.s_iou == 1.0 for d in dets)


def test_fit_head_then_detect_is_deterministic():
    scenes = [two_square_scene()] * 3
    a = pipeline.fit_head(identity_model(), scenes)
    b = pipeline.fit_head(identity_model(), scenes)
    assert len(a.heads) == a.verify.heads
    for ha, hb in zip(a.heads, b.heads):
        for k in ha:
            assert np.array_equal(ha[k], hb[k])
    _, da = pipeline.detect(a, scenes[0].image, apply_threshold=False)
    _, db = pipeline.detect(b, scenes[0].image, apply_threshold=False)
    assert len(da) == 2 and [d.score for d in da] == [d.score for d in db]
    assert all(0.0 <= d.s_cls <= 1.0 for d in da)


def test_head_samples_have_targets():
    samples = pipeline.head_samples(identity_model(), [two_square_scene()])
    assert len(samples) == 2
    assert sorted(cls for _, cls, _ in samples) == [1, 2]
    assert all(iou == 1.0 for _, _, iou in samples)
