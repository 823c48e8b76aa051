"""Classify candidate segments, predict their IoU and reject false positives.

A small conv head looks at a fixed-size block cut around each candidate:
the image channels, the label map (centred on the segment's mean label)
and the candidate mask, all bilinearly resampled to ``roi_size``. Several
independently seeded heads can be averaged, and overlapping detections of
one class are thinned by mask NMS.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tinynet
from .grid import upsample_nearest
from .tinynet import NetConfig, OptState


def default_head_layers(num_classes):
    return [
        {"type": "conv", "kernel": 3, "out": 16, "stride": 1},
        {"type": "relu"},
        {"type": "conv", "kernel": 3, "out": 32, "stride": 2},
        {"type": "relu"},
        {"type": "conv", "kernel": 3, "out": 32, "stride": 1},
        {"type": "relu"},
        {"type": "gap"},
        {"type": "linear", "out": 32},
        {"type": "relu"},
        {"type": "linear", "out": num_classes + 2},
    ]


@dataclass(frozen=True)
class VerifyConfig:
    roi_size: int = 14
    num_classes: int = 3
    alpha: float = 0.5
    accept_threshold: float = 0.5
    matching_iou: float = 0.5
    image_channels: int = 3
    init_seed: int = 0
    epochs: int = 40
    lr: float = 3e-3
    batch: int = 16
    label_clip: float = 3.0
    augment: bool = True
    test_time_augment: bool = True
    heads: int = 5
    nms_iou: float = 0.5

    def __post_init__(self):
        if self.roi_size < 4:
            raise ValueError("roi_size must be >= 4")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")

    @property
    def head(self):
        return NetConfig(layers=tuple(default_head_layers(self.num_classes)),
                         input_channels=self.image_channels + 2, init_seed=self.init_seed)


@dataclass
class Detection:
    mask: np.ndarray
    label: int
    s_cls: float
    s_iou: float
    score: float
    probs: np.ndarray = field(default=None, repr=False)


def combined_score(s_cls, s_iou, alpha):
    return alpha * s_iou + (1.0 - alpha) * s_cls


def bounding_box(mask, expand=0.1):
    """Continuous ``(y0, x0, y1, x1)`` box of the mask grown by ``expand`` per side, clipped."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValueError("mask is empty")
    h, w = mask.shape
    y0, y1 = float(ys.min()), float(ys.max() + 1)
    x0, x1 = float(xs.min()), float(xs.max() + 1)
    dy, dx = expand * (y1 - y0), expand * (x1 - x0)
    return max(y0 - dy, 0.0), max(x0 - dx, 0.0), min(y1 + dy, float(h)), min(x1 + dx, float(w))


def crop_resize(arr, box, size):
    """Bilinear resample of ``arr[y0:y1, x0:x1]`` (continuous box) to ``size x size``.

    Sample centres follow the half-pixel convention; coordinates are clamped
    to the array so border pixels are replicated.
    """
    arr = np.asarray(arr, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w = arr.shape[:2]
    y0, x0, y1, x1 = box
    ys = np.clip(y0 + (np.arange(size) + 0.5) * (y1 - y0) / size - 0.5, 0.0, h - 1.0)
    xs = np.clip(x0 + (np.arange(size) + 0.5) * (x1 - x0) / size - 0.5, 0.0, w - 1.0)
    yi = np.minimum(np.floor(ys).astype(int), h - 1)
    xi = np.minimum(np.floor(xs).astype(int), w - 1)
    yj = np.minimum(yi + 1, h - 1)
    xj = np.minimum(xi + 1, w - 1)
    wy = (ys - yi)[:, None, None]
    wx = (xs - xi)[None, :, None]
    top = arr[yi][:, xi] * (1 - wx) + arr[yi][:, xj] * wx
    bot = arr[yj][:, xi] * (1 - wx) + arr[yj][:, xj] * wx
    out = top * (1 - wy) + bot * wy
    return out[:, :, 0] if squeeze else out


def extract_roi(image, f, seg, cfg: VerifyConfig):
    """``(C + 2, roi, roi)`` block: image channels, centred label map, mask."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    h, w = image.shape[:2]
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (h, w):
        factor = h // f.shape[0]
        f = upsample_nearest(f, factor)
    mask = seg.mask
    if mask.shape != (h, w):
        mask = upsample_nearest(mask, h // mask.shape[0])
    box = bounding_box(mask)
    s = cfg.roi_size
    img = crop_resize(image, box, s)
    lab = np.clip(crop_resize(f, box, s) - seg.mean_label, -cfg.label_clip, cfg.label_clip)
    msk = crop_resize(mask.astype(np.float64), box, s)
    return np.concatenate([np.transpose(img, (2, 0, 1)), lab[None], msk[None]], axis=0)


def _softmax(z):
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def verify_forward(params, block, cfg: VerifyConfig):
    """Class probabilities over ``C + 1`` (index 0 = reject) and the clamped IoU."""
    out, tape = tinynet.forward_raw(params, cfg.head, block)
    probs = _softmax(out[:-1])
    s_iou = float(np.clip(out[-1], 0.0, 1.0))
    return probs, s_iou, out, tape


def verify_predict(heads, block, cfg: VerifyConfig):
    """Prediction of one head, or the mean over a list of heads, for one ROI block.

    With ``cfg.test_time_augment`` the probabilities and the IoU are also
    averaged over the eight dihedral transforms of the block, the same group
    the heads are trained under.
    """
    if not isinstance(heads, (list, tuple)):
        heads = [heads]
    ks = range(8) if cfg.test_time_augment else [0]
    outs = [verify_forward(p, dihedral(block, k), cfg) for p in heads for k in ks]
    probs = np.mean([o[0] for o in outs], axis=0)
    s_iou = float(np.mean([o[1] for o in outs]))
    return probs, s_iou


def verify_train_targets(candidates, gt, cfg: VerifyConfig):
    """``(class_target, iou_target)`` per candidate against the best-matching GT."""
    ids = gt.instance_ids()
    masks = [gt.mask(i) for i in ids]
    out = []
    for c in candidates:
        m = c.mask
        if m.shape != gt.shape:
            m = upsample_nearest(m, gt.shape[0] // m.shape[0])
        best, best_id = 0.0, None
        for i, gm in zip(ids, masks):
            union = np.count_nonzero(m | gm)
            iou = np.count_nonzero(m & gm) / union if union else 0.0
            if iou > best:  # strict: ties keep the smaller id
                best, best_id = iou, i
        cls = gt.classes[best_id] if best_id is not None and best >= cfg.matching_iou else 0
        out.append((cls, best))
    return out


def make_detection(mask, probs, s_iou, cfg: VerifyConfig):
    label = int(np.argmax(probs))
    s_cls = float(probs[label])
    return Detection(mask=mask, label=label, s_cls=s_cls, s_iou=s_iou,
                     score=combined_score(s_cls, s_iou, cfg.alpha), probs=probs)


def accept(dets, cfg: VerifyConfig):
    """Keep non-reject detections scoring at least ``accept_threshold``."""
    return [d for d in dets if d.label != 0 and d.score >= cfg.accept_threshold]


def mask_iou(a, b):
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 0.0


def suppress(dets, iou_threshold):
    """Greedy per-class NMS on masks, highest score first.

    A detection is dropped when its mask overlaps a kept detection of the
    same class by more than ``iou_threshold``. Output is in score order
    (stable for ties). A threshold of 1 or more keeps everything.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    if iou_threshold >= 1.0:
        return [dets[i] for i in order]
    kept = []
    for i in order:
        d = dets[i]
        if all(k.label != d.label or mask_iou(k.mask, d.mask) <= iou_threshold for k in kept):
            kept.append(d)
    return kept


def head_loss_grad(out, class_target, iou_target, theta=0.1):
    """Cross-entropy + Huber IoU regression on the raw head output."""
    logits = out[:-1]
    p = _softmax(logits)
    ce = -math.log(max(p[class_target], 1e-300))
    g = np.zeros_like(out)
    g[:-1] = p
    g[class_target] -= 1.0
    e = out[-1] - iou_target
    a = abs(e)
    if a < theta:
        hub, dh = a * a / (2 * theta), a / theta
    else:
        hub, dh = a - theta / 2, 1.0
    g[-1] = dh * np.sign(e)
    return ce + hub, g


def dihedral(block, k):
    """One of the 8 flips/quarter turns of a ``(C, s, s)`` block, ``k`` in 0..7."""
    out = np.rot90(block, k % 4, axes=(1, 2))
    if k >= 4:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)


def train_heads(samples, cfg: VerifyConfig, progress=None):
    """``cfg.heads`` heads on the same samples, head ``k`` seeded with ``init_seed + k``."""
    return [train_head(samples, replace(cfg, init_seed=cfg.init_seed + k), progress)
            for k in range(cfg.heads)]


def train_head(samples, cfg: VerifyConfig, progress=None):
    """Fit the head on ``(block, class_target, iou_target)`` samples with Adam.

    With ``cfg.augment`` every visit of a sample sees a random dihedral
    transform of its block; shape classes and IoU are unchanged by these.
    """
    head = cfg.head
    params = tinynet.init(head)
    opt = OptState(lr=cfg.lr, momentum=0.9, weight_decay=0.0, kind="adam")
    if not samples:
        return params
    rng = np.random.default_rng([cfg.init_seed, 11])
    n = len(samples)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch):
            idx = order[start:start + cfg.batch]
            acc = None
            for i in idx:
                block, cls, iou = samples[i]
                if cfg.augment:
                    block = dihedral(block, int(rng.integers(8)))
                out, tape = tinynet.forward_raw(params, head, block)
                loss, g = head_loss_grad(out, cls, iou)
                total += loss
                grads = tinynet.backward(tape, head, g)
                if acc is None:
                    acc = grads
                else:
                    for k in acc:
                        acc[k] += grads[k]
            tinynet.step(params, {k: v / len(idx) for k, v in acc.items()}, opt)
        if progress is not None:
            progress(epoch, total / n)
    return params
