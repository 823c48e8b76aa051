"""Finite-difference checks of every analytic gradient in the package.

A check point is rejected and redrawn when a perturbation of +-step could
cross a non-smooth locus (ReLU hinge, margin, rounding jump, truncation
edge), since central differences are meaningless across a kink.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses, tinynet
from .grid import GroundTruthMap, resize_nearest
from .losses import LossConfig
from .sampling import PairList, SamplerConfig, sample_pairs_stratified
from .synthgen import SceneConfig, generate

LOSS_TERMS = ("binary", "pi", "ms_cauchy", "ms_truncated", "quant")


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    points: int
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance


def rel_error(a, n, floor=1e-6):
    """Max relative error; entries below ``floor`` in magnitude (round-off
    territory for a differenced O(1) loss) are compared absolutely."""
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / den))


def central_diff(fn, x, step, index):
    xp = x.copy()
    xp.flat[index] += step
    xm = x.copy()
    xm.flat[index] -= step
    return (fn(xp) - fn(xm)) / (2.0 * step)


def _random_problem(rng, size=6, n_ids=3):
    ids = rng.integers(0, n_ids + 1, size=(size, size))
    gt = GroundTruthMap(ids, {k: 1 for k in range(1, n_ids + 1)})
    f = rng.uniform(-1.0, 5.0, size=(size, size))
    a = rng.integers(0, size * size, 24)
    b = rng.integers(0, size * size, 24)
    keep = a != b
    return f, gt, PairList(a[keep], b[keep], (size, size))


def _kink_distance(term, f, gt, pairs, cfg: LossConfig):
    """Smallest distance of any kink argument to its kink for ``term``."""
    th = cfg.huber_theta
    if term == "binary":
        fg = gt.ids > 0
        arg = np.where(fg, cfg.m1 - f, f)
        return float(min(np.min(np.abs(arg)), np.min(np.abs(arg - th))))
    if term == "pi":
        fa, fb = np.maximum(f.ravel()[pairs.a], 0), np.maximum(f.ravel()[pairs.b], 0)
        fd = np.abs(fa - fb)
        d = [np.abs(f.ravel()[pairs.a]), np.abs(f.ravel()[pairs.b]), fd, np.abs(fd - th)]
        ids = gt.ids.ravel()
        diff = ids[pairs.a] != ids[pairs.b]
        if diff.any():
            margin = cfg.m2 - fd[diff]
            d += [np.abs(margin), np.abs(margin - th)]
        return float(min(np.min(x) for x in d))
    if term == "ms_truncated":
        u = f[:-1, :-1] - f[:-1, 1:]
        v = f[:-1, :-1] - f[1:, :-1]
        # moving f by delta moves u, v by at most 2 delta each
        q = cfg.mu * (u * u + v * v)
        slope = 4.0 * cfg.mu * (np.abs(u) + np.abs(v)) + 1e-12
        return float(np.min(np.abs(q - cfg.nu) / slope))
    if term == "quant":
        frac = f - np.floor(f)
        return float(np.min(np.minimum(np.minimum(frac, 1.0 - frac), np.abs(frac - 0.5))))
    return np.inf


def _term_fn(term, gt, pairs, cfg):
    if term == "binary":
        return lambda f: losses.binary_loss(f, gt, cfg)
    if term == "pi":
        return lambda f: losses.permutation_invariant_loss(f, gt, pairs, cfg)
    if term == "ms_cauchy":
        return lambda f: losses.ms_cauchy_loss(f, cfg)
    if term == "ms_truncated":
        return lambda f: losses.ms_truncated_loss(f, cfg)
    return lambda f: losses.quantization_loss(f)


def check_loss_terms(points=100, step=1e-4, tolerance=1e-4, seed=0, cfg=None, clearance=1e-2):
    """Check every term at ``points`` random maps (terms taken round-robin).

    Each point compares the full gradient map against central differences
    at every pixel; maps closer than ``clearance`` to a kink are redrawn. Returns one :class:`CheckResult` per term.
    """
    cfg = cfg or LossConfig(nu=4.0)
    rng = np.random.default_rng([seed, 11])
    worst = dict.fromkeys(LOSS_TERMS, 0.0)
    counts = dict.fromkeys(LOSS_TERMS, 0)
    for p in range(points):
        term = LOSS_TERMS[p % len(LOSS_TERMS)]
        for _ in range(20000):
            f, gt, pairs = _random_problem(rng)
            if _kink_distance(term, f, gt, pairs, cfg) >= clearance:
                break
        else:
            raise RuntimeError(f"could not draw a smooth point for {term}")  # pragma: no cover
        fn = _term_fn(term, gt, pairs, cfg)
        analytic = fn(f).grad
        numeric = np.array([central_diff(lambda x: fn(x).value, f, step, i) for i in range(f.size)])
        worst[term] = max(worst[term], rel_error(analytic.ravel(), numeric))
        counts[term] += 1
    return [CheckResult(t, worst[t], counts[t], tolerance) for t in LOSS_TERMS]


def _signature(params, net, image, gt, pairs, cfg):
    """Every discrete branch taken by forward + loss, for kink detection."""
    f, tape = tinynet.forward(params, net, image)
    parts = [r for r, s in zip(tape.records, net.layers) if s["type"] == "relu"]
    fg = gt.ids > 0
    parts.append(np.where(fg, cfg.m1 - f > 0, f > 0))
    ff = np.maximum(f.ravel(), 0)
    fd = ff[pairs.a] - ff[pairs.b]
    parts += [fd > 0, np.abs(fd) < cfg.m2, losses.round_half_away(f), f - losses.round_half_away(f) > 0]
    return parts


def check_network(n_params=50, step=1e-3, tolerance=1e-3, size=16, seed=0, net=None, cfg=None):
    """End-to-end parameter gradients of the total loss on a small scene."""
    net = net or tinynet.NetConfig(init_seed=seed)
    cfg = cfg or LossConfig()
    scene = generate(SceneConfig(height=size, width=size, min_instances=1, max_instances=3, min_visible=12,
                                 occluder_prob=0.0, seed=seed), 0)
    gt = resize_nearest(scene.gt, net.downsample_factor)
    pairs = sample_pairs_stratified(gt, SamplerConfig(window=9, center_radius=2, dilation=2))
    params = tinynet.init(net)
    # shift the output bias so the final ReLU is active on most pixels
    last = [k for k in params if k.endswith(".b")][-1]
    params[last] = params[last] + 1.5

    def loss_of(p):
        f, _ = tinynet.forward(p, net, scene.image)
        return losses.total_loss(f, gt, pairs, cfg).value

    f, tape = tinynet.forward(params, net, scene.image)
    grads = tinynet.backward(tape, net, losses.total_loss(f, gt, pairs, cfg).grad)
    rng = np.random.default_rng([seed, 13])
    names = sorted(params)
    worst, done, tries = 0.0, 0, 0
    while done < n_params:
        tries += 1
        if tries > 50 * n_params:
            raise RuntimeError("too many parameters sit on a kink")
        name = names[rng.integers(len(names))]
        idx = int(rng.integers(params[name].size))
        sig = []
        for sgn in (1.0, -1.0):
            q = params.copy()
            q[name] = q[name].copy()
            q[name].flat[idx] += sgn * step
            sig.append(_signature(q, net, scene.image, gt, pairs, cfg))
        if any(not np.array_equal(x, y) for x, y in zip(*sig)):
            continue
        plus, minus = params.copy(), params.copy()
        plus[name] = plus[name].copy()
        minus[name] = minus[name].copy()
        plus[name].flat[idx] += step
        minus[name].flat[idx] -= step
        numeric = (loss_of(plus) - loss_of(minus)) / (2.0 * step)
        worst = max(worst, rel_error(grads[name].flat[idx], numeric, floor=1e-8))
        done += 1
    return CheckResult("network", worst, done, tolerance)


def run_all(points=100, step=1e-4, tolerance=1e-4, net_params=50, net_step=1e-3,
            net_tolerance=1e-3, size=16, seed=0):
    out = check_loss_terms(points, step, tolerance, seed)
    out.append(check_network(net_params, net_step, net_tolerance, size, seed))
    return out
