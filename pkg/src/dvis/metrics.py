"""Instance-level evaluation: mask IoU, AP over IoU thresholds, contour F1."""
from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grid import DimensionError, GroundTruthMap

IOU_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)
CONTOUR_TOLERANCES = (1, 5, 10)


@dataclass
class Prediction:
    """One scored instance mask, the unit consumed by the metrics."""

    mask: np.ndarray
    label: int
    score: float = 1.0


def mask_iou(a, b):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def _gt_instances(gt: GroundTruthMap, label):
    return [gt.mask(i) for i in gt.instance_ids() if gt.classes[i] == label]


def match_detections(dets, gts, iou_threshold, label):
    """Greedy matching in descending score order.

    ``dets`` and ``gts`` are per-image lists (of :class:`Prediction` and
    :class:`GroundTruthMap`). Returns the ranked list of ``(score, is_tp)``
    and the number of ground-truth instances of ``label``.
    """
    ranked = []
    n_gt = 0
    gt_masks = []
    for g in gts:
        masks = _gt_instances(g, label)
        gt_masks.append(masks)
        n_gt += len(masks)
    for img, preds in enumerate(dets):
        for k, p in enumerate(preds):
            if p.label == label:
                ranked.append((-float(p.score), img, k, p.mask))
    # stable sort keeps input order among equal scores
    ranked.sort(key=lambda t: t[0])
    used = [np.zeros(len(m), dtype=bool) for m in gt_masks]
    out = []
    for neg_score, img, _k, mask in ranked:
        best, best_j = -1.0, -1
        for j, gm in enumerate(gt_masks[img]):
            if used[img][j]:
                continue
            iou = mask_iou(mask, gm)
            if iou > best:
                best, best_j = iou, j
        tp = best_j >= 0 and best >= iou_threshold
        if tp:
            used[img][best_j] = True
        out.append((-neg_score, tp))
    return out, n_gt


def ap_from_ranked(tp_flags, n_gt):
    """All-points interpolated AP from ranked TP flags."""
    if n_gt == 0:
        return 0.0
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    if tp.size == 0:
        return 0.0
    k = np.arange(1, tp.size + 1)
    recall = tp / n_gt
    precision = tp / k
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def average_precision(dets, gts, iou_threshold, label):
    ranked, n_gt = match_detections(dets, gts, iou_threshold, label)
    return ap_from_ranked([t for _, t in ranked], n_gt)


def boundary(mask):
    """Mask pixels with a 4-neighbour outside the mask (image border counts as outside)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy()
    inner = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(2, 1), border_value=0)
    return mask & ~inner


def _near(points, target, tol):
    if tol <= 0:
        return points & target
    grown = ndimage.binary_dilation(target, structure=np.ones((2 * tol + 1, 2 * tol + 1), dtype=bool))
    return points & grown


def contour_scores(preds, gt: GroundTruthMap, tolerance):
    """Per-image boundary precision and recall averaged over classes."""
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    shape = gt.shape
    labels = sorted({p.label for p in preds} | {gt.classes[i] for i in gt.instance_ids()})
    if not labels:
        return None
    ps, rs = [], []
    for c in labels:
        pb = np.zeros(shape, dtype=bool)
        for p in preds:
            if p.label == c:
                pb |= boundary(p.mask)
        gb = np.zeros(shape, dtype=bool)
        for i in gt.instance_ids():
            if gt.classes[i] == c:
                gb |= boundary(gt.mask(i))
        n_p, n_g = int(pb.sum()), int(gb.sum())
        if n_p == 0 and n_g == 0:
            ps.append(1.0)
            rs.append(1.0)
            continue
        ps.append(_near(pb, gb, tolerance).sum() / n_p if n_p else 0.0)
        rs.append(_near(gb, pb, tolerance).sum() / n_g if n_g else 0.0)
    return float(np.mean(ps)), float(np.mean(rs))


def contour_f1(dets, gts, tolerance):
    """Boundary F1 at ``tolerance`` pixels (Chebyshev), averaged over images."""
    scores = []
    for preds, gt in zip(dets, gts):
        pr = contour_scores(preds, gt, tolerance)
        if pr is None:
            scores.append(1.0)
            continue
        p, r = pr
        scores.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
    return float(np.mean(scores)) if scores else 0.0


def evaluate(dets, gts, num_classes=None):
    """Full report: per-class AP, mAP per IoU threshold, AP average, contour F1."""
    present = sorted({g.classes[i] for g in gts for i in g.instance_ids()})
    if num_classes is not None:
        present = [c for c in present if 1 <= c <= num_classes]
    report = OrderedDict()
    per_class = OrderedDict()
    maps = OrderedDict()
    for t in IOU_THRESHOLDS:
        key = f"{t:.1f}"
        per_class[key] = OrderedDict((str(c), average_precision(dets, gts, t, c)) for c in present)
        vals = list(per_class[key].values())
        maps[key] = float(np.mean(vals)) if vals else 0.0
    report["per_class_ap"] = per_class
    report["map"] = maps
    report["ap_avg"] = float(np.mean(list(maps.values())))
    report["contour_f1"] = OrderedDict((str(t), contour_f1(dets, gts, t)) for t in CONTOUR_TOLERANCES)
    return report


def report_to_json(report):
    return json.dumps(report, indent=2)
