import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dvis.grid import GroundTruthMap
from dvis.sampling import (EmptyDomainError, SamplerConfig, sample_pairs, sample_pairs_random,
                           sample_pairs_stratified, stratified_offsets)


def gt_of(ids):
    ids = np.asarray(ids)
    return GroundTruthMap(ids, {int(i): 1 for i in np.unique(ids) if i > 0})


def brute_offsets(window, c, r):
    half = (window - 1) // 2
    out = set()
    for dy in range(-half, half + 1):
        for dx in range(-half, half + 1):
            cheb = max(abs(dx), abs(dy))
            four = abs(dx) + abs(dy) == 1
            dense = cheb <= c
            dil = dx % r == 0 and dy % r == 0
            if (four or dense or dil) and (dx > 0 or (dx == 0 and dy > 0)):
                out.add((dx, dy))
    return out


def test_window3_offsets():
    offs = stratified_offsets(SamplerConfig(window=3, center_radius=1, dilation=1))
    assert {tuple(o) for o in offs} == {(1, -1), (1, 0), (1, 1), (0, 1)}


def test_default_offset_count_frozen():
    offs = stratified_offsets(SamplerConfig())
    assert len(offs) == len(brute_offsets(129, 8, 8)) == 284
    assert not any((o == 0).all() for o in offs)


@pytest.mark.parametrize("w,c,r", [(9, 4, 4), (33, 4, 4), (17, 2, 3), (129, 8, 8), (5, 2, 7)])
def test_offsets_match_enumeration(w, c, r):
    offs = stratified_offsets(SamplerConfig(window=w, center_radius=c, dilation=r))
    assert {tuple(o) for o in offs} == brute_offsets(w, c, r)
    assert len({tuple(o) for o in offs}) == len(offs)
    assert np.abs(offs).max() <= (w - 1) // 2


def test_stratified_all_background_empty():
    p = sample_pairs_stratified(gt_of(np.zeros((6, 6), int)), SamplerConfig())
    assert len(p) == 0


def test_stratified_single_pixel_window3():
    ids = np.zeros((5, 5), int)
    ids[2, 2] = 1
    p = sample_pairs_stratified(gt_of(ids), SamplerConfig(window=3, center_radius=1, dilation=1))
    got = sorted(map(tuple, p.coords()))
    # the pixel as anchor: 4 half-plane offsets; as partner: the 4 mirrored anchors
    want = []
    for dx, dy in [(1, -1), (1, 0), (1, 1), (0, 1)]:
        want.append(((2, 2), (2 + dx, 2 + dy)))
        want.append(((2 - dx, 2 - dy), (2, 2)))
    assert got == sorted(want)


def test_stratified_order_and_determinism():
    ids = np.zeros((6, 6), int)
    ids[1:4, 2:5] = 1
    cfg = SamplerConfig(window=5, center_radius=1, dilation=2)
    p1 = sample_pairs_stratified(gt_of(ids), cfg)
    p2 = sample_pairs_stratified(gt_of(ids), cfg)
    assert np.array_equal(p1.a, p2.a) and np.array_equal(p1.b, p2.b)
    assert np.all(np.diff(p1.a) >= 0)  # row-major anchors


@given(arrays(np.int64, (7, 6), elements=st.integers(0, 2)))
def test_stratified_pair_properties(ids):
    cfg = SamplerConfig(window=5, center_radius=1, dilation=2)
    g = gt_of(ids)
    p = sample_pairs_stratified(g, cfg)
    fg = (g.ids > 0).ravel()
    assert np.all(fg[p.a] | fg[p.b])
    assert np.all(p.a != p.b)
    w = ids.shape[1]
    cheb = np.maximum(np.abs(p.a % w - p.b % w), np.abs(p.a // w - p.b // w))
    assert np.all(cheb <= 2)
    # exhaustive oracle on the pair set
    offs = stratified_offsets(cfg)
    want = set()
    for y in range(ids.shape[0]):
        for x in range(w):
            for dx, dy in offs:
                yy, xx = y + dy, x + dx
                if 0 <= yy < ids.shape[0] and 0 <= xx < w and (ids[y, x] or ids[yy, xx]):
                    want.add((y * w + x, yy * w + xx))
    assert set(zip(p.a.tolist(), p.b.tolist())) == want


def test_random_pairs():
    ids = np.zeros((32, 32), int)
    ids[5:20, 5:20] = 1
    cfg = SamplerConfig(mode="random", random_pair_count=500, seed=3)
    p1 = sample_pairs_random(gt_of(ids), cfg)
    p2 = sample_pairs(gt_of(ids), cfg)
    assert len(p1) == 500
    assert np.array_equal(p1.a, p2.a) and np.array_equal(p1.b, p2.b)
    fg = (ids > 0).ravel()
    assert np.all(fg[p1.a] | fg[p1.b]) and np.all(p1.a != p1.b)
    p3 = sample_pairs_random(gt_of(ids), SamplerConfig(mode="random", random_pair_count=500, seed=4))
    assert not np.array_equal(p1.a, p3.a)


def test_random_single_foreground_pixel():
    ids = np.zeros((4, 4), int)
    ids[1, 2] = 1
    p = sample_pairs_random(gt_of(ids), SamplerConfig(mode="random", random_pair_count=1))
    assert 6 in (int(p.a[0]), int(p.b[0]))


def test_random_empty_domain():
    with pytest.raises(EmptyDomainError):
        sample_pairs_random(gt_of(np.zeros((4, 4), int)), SamplerConfig(mode="random"))


@pytest.mark.parametrize("kw", [dict(window=4), dict(window=1), dict(center_radius=0),
                                dict(window=9, center_radius=5), dict(dilation=0), dict(mode="grid")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SamplerConfig(**kw)
