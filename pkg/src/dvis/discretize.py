"""Turn a real-valued label map into candidate segments with 1-D mean shift."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class MeanShiftConfig:
    bandwidths: tuple = (0.9, 0.4)
    epsilon: float = 1e-3
    max_iterations: int = 100
    background_threshold: float = 1.0
    min_segment_pixels: int = 20
    dedup_iou: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "bandwidths", tuple(float(b) for b in self.bandwidths))
        if not self.bandwidths or min(self.bandwidths) <= 0:
            raise ValueError("bandwidths must be a non-empty list of positive numbers")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.dedup_iou <= 1:
            raise ValueError("dedup_iou must lie in (0, 1]")


@dataclass
class CandidateSegment:
    mask: np.ndarray
    mean_label: float
    bandwidth: float

    @property
    def area(self):
        return int(self.mask.sum())


def mean_shift_1d(values, bandwidth, cfg: MeanShiftConfig | None = None):
    """Cluster scalar values with a flat-kernel mean shift.

    Every value climbs to a mode (the mean of the values within
    ``bandwidth`` of the current position) until it moves less than
    ``epsilon``. Converged positions closer than ``bandwidth / 2`` are
    merged, scanning in ascending order.

    Returns ``(assignment, modes)``: cluster index per value and the
    ascending merged modes.
    """
    cfg = cfg or MeanShiftConfig()
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("mean_shift_1d needs at least one value")
    order = np.argsort(values, kind="stable")
    sv = values[order]
    csum = np.concatenate([[0.0], np.cumsum(sv)])
    # identical values share a trajectory
    uniq, inverse = np.unique(sv, return_inverse=True)
    conv = kernels.mean_shift_modes(sv, csum, uniq, bandwidth, cfg.epsilon, cfg.max_iterations)
    corder = np.argsort(conv, kind="stable")
    cs = conv[corder]
    group = np.zeros(cs.shape[0], dtype=np.int64)
    group[1:] = np.cumsum(np.diff(cs) >= bandwidth / 2.0)
    n_groups = int(group[-1]) + 1
    counts = np.bincount(group)
    modes = np.bincount(group, weights=cs) / counts
    label_of_uniq = np.empty_like(group)
    label_of_uniq[corder] = group
    assignment = np.empty(values.shape[0], dtype=np.int64)
    assignment[order] = label_of_uniq[inverse]
    assert modes.shape[0] == n_groups
    return assignment, modes


def _iou(a, b):
    inter = np.count_nonzero(a & b)
    union = np.count_nonzero(a | b)
    return inter / union if union else 0.0


def discretize(f, cfg: MeanShiftConfig | None = None):
    """Candidate segments from ``f`` across all bandwidths, deduplicated.

    Bandwidths are visited largest first; a segment whose mask overlaps an
    already kept one with IoU >= ``dedup_iou`` is dropped. A cluster may be
    spatially disconnected and still forms a single segment.
    """
    cfg = cfg or MeanShiftConfig()
    f = np.asarray(f, dtype=np.float64)
    fg = f > cfg.background_threshold
    if not fg.any():
        return []
    vals = f[fg]
    kept = []
    for bw in sorted(cfg.bandwidths, reverse=True):
        assignment, modes = mean_shift_1d(vals, bw, cfg)
        label_map = np.full(f.shape, -1, dtype=np.int64)
        label_map[fg] = assignment
        for k in range(modes.shape[0]):
            mask = label_map == k
            area = int(mask.sum())
            if area < cfg.min_segment_pixels:
                continue
            if any(_iou(mask, c.mask) >= cfg.dedup_iou for c in kept):
                continue
            kept.append(CandidateSegment(mask=mask, mean_label=float(f[mask].mean()), bandwidth=bw))
    return kept
