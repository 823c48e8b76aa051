"""Glue: trained label net + discretization + verification head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tinynet, verify
from .discretize import MeanShiftConfig, discretize
from .grid import upsample_nearest
from .tinynet import NetConfig
from .verify import VerifyConfig


@dataclass
class Model:
    net: NetConfig
    params: tinynet.ParamSet
    meanshift: MeanShiftConfig
    verify: VerifyConfig
    heads: list | None = None  # verification heads, averaged at inference


def predict_labels(model: Model, image):
    f, _ = tinynet.forward(model.params, model.net, image)
    return f


def candidates(model: Model, image, f=None):
    """Candidate segments at image resolution."""
    if f is None:
        f = predict_labels(model, image)
    full = upsample_nearest(f, model.net.downsample_factor)
    return discretize(full, model.meanshift), full


def head_samples(model: Model, scenes):
    """Training blocks for the verification head from the net's own candidates."""
    samples = []
    for scene in scenes:
        cands, full = candidates(model, scene.image)
        targets = verify.verify_train_targets(cands, scene.gt, model.verify)
        for c, (cls, iou) in zip(cands, targets):
            samples.append((verify.extract_roi(scene.image, full, c, model.verify), cls, iou))
    return samples


def fit_head(model: Model, scenes, progress=None):
    model.heads = verify.train_heads(head_samples(model, scenes), model.verify, progress)
    return model


def detect(model: Model, image, apply_threshold=True):
    """Returns ``(f, detections)`` for one image.

    With trained heads the detections are suppressed per class at
    ``verify.nms_iou`` and come out in score order. Without heads every
    candidate is passed through unscored.
    """
    f = predict_labels(model, image)
    cands, full = candidates(model, image, f)
    dets = []
    for c in cands:
        if not model.heads:
            probs = np.zeros(model.verify.num_classes + 1)
            probs[1] = 1.0
            s_iou = 1.0
        else:
            block = verify.extract_roi(image, full, c, model.verify)
            probs, s_iou = verify.verify_predict(model.heads, block, model.verify)
        dets.append(verify.make_detection(c.mask, probs, s_iou, model.verify))
    if model.heads:
        dets = verify.suppress(dets, model.verify.nms_iou)
    if apply_threshold:
        dets = verify.accept(dets, model.verify)
    return f, dets
