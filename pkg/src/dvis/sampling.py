"""Pixel-pair sets over which the permutation-invariant loss is evaluated."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .grid import GroundTruthMap, foreground_mask


class EmptyDomainError(ValueError):
    """No foreground pixel to anchor a pair on."""


@dataclass(frozen=True)
class SamplerConfig:
    window: int = 129
    center_radius: int = 8
    dilation: int = 8
    mode: str = "stratified"
    random_pair_count: int = 4096
    seed: int = 0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if not 0 < self.center_radius < self.window / 2:
            raise ValueError("center_radius must satisfy 0 < center_radius < window/2")
        if self.dilation < 1:
            raise ValueError("dilation must be >= 1")
        if self.mode not in ("stratified", "random"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")


@dataclass(frozen=True)
class PairList:
    """Pairs of flat row-major pixel indices into a map of ``shape``."""

    a: np.ndarray
    b: np.ndarray
    shape: tuple

    def __len__(self):
        return int(self.a.shape[0])

    def coords(self):
        """Pairs as ``((x1, y1), (x2, y2))`` with x the column index."""
        w = self.shape[1]
        return [((int(p % w), int(p // w)), (int(q % w), int(q // w))) for p, q in zip(self.a, self.b)]


def stratified_offsets(cfg: SamplerConfig) -> np.ndarray:
    """Half-plane ``(dx, dy)`` offsets: 4-neighbours, dense center, dilated ring.

    Ordered by ``(dy, dx)`` so pair generation is deterministic.
    """
    half = (cfg.window - 1) // 2
    offs = {(1, 0), (0, 1), (-1, 0), (0, -1)}
    c = cfg.center_radius
    for dy in range(-c, c + 1):
        for dx in range(-c, c + 1):
            offs.add((dx, dy))
    r = cfg.dilation
    lim = (half // r) * r
    for dy in range(-lim, lim + 1, r):
        for dx in range(-lim, lim + 1, r):
            offs.add((dx, dy))
    keep = [o for o in offs if o[0] > 0 or (o[0] == 0 and o[1] > 0)]
    keep.sort(key=lambda o: (o[1], o[0]))
    return np.array(keep, dtype=np.int64).reshape(-1, 2)


def sample_pairs_stratified(gt: GroundTruthMap, cfg: SamplerConfig, offsets=None) -> PairList:
    if offsets is None:
        offsets = stratified_offsets(cfg)
    a, b = kernels.stratified_pairs(foreground_mask(gt), offsets)
    return PairList(a, b, gt.shape)


def sample_pairs_random(gt: GroundTruthMap, cfg: SamplerConfig) -> PairList:
    """Uniform pixel pairs with at least one foreground endpoint.

    Candidates come from a Philox counter-based stream keyed by ``cfg.seed``
    and are filtered by rejection, giving up after ``100 * count`` draws.
    """
    count = cfg.random_pair_count
    if count < 1:
        raise ValueError("random_pair_count must be >= 1")
    fg = foreground_mask(gt).ravel()
    if not fg.any():
        raise EmptyDomainError("random pair sampling needs at least one foreground pixel")
    n = fg.shape[0]
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    a_out, b_out = [], []
    have, tried = 0, 0
    cap = 100 * count
    while have < count and tried < cap:
        batch = min(max(2 * (count - have), 64), cap - tried)
        a = rng.integers(0, n, size=batch)
        b = rng.integers(0, n, size=batch)
        tried += batch
        ok = (a != b) & (fg[a] | fg[b])
        a_out.append(a[ok])
        b_out.append(b[ok])
        have += int(ok.sum())
    if have < count:
        raise EmptyDomainError(f"only {have} valid pairs after {cap} draws")
    a = np.concatenate(a_out)[:count].astype(np.int64)
    b = np.concatenate(b_out)[:count].astype(np.int64)
    return PairList(a, b, gt.shape)


def sample_pairs(gt: GroundTruthMap, cfg: SamplerConfig) -> PairList:
    if cfg.mode == "random":
        return sample_pairs_random(gt, cfg)
    return sample_pairs_stratified(gt, cfg)
