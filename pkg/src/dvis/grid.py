"""Image-domain containers and elementary grid operations.

Images are ``(H, W, C)`` float arrays, real label maps are ``(H, W)`` float
arrays and binary masks are ``(H, W)`` bool arrays. Only the ground truth
carries extra structure (the id -> class table), so it gets a dataclass.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Array shapes do not line up."""


@dataclass(frozen=True)
class GroundTruthMap:
    """Instance ids per pixel (0 = background) plus the class of every id.

    Positive ids carry no ordering; any bijection on them describes the
    same segmentation.
    """

    ids: np.ndarray
    classes: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = np.asarray(self.ids)
        if ids.ndim != 2 or ids.shape[0] < 1 or ids.shape[1] < 1:
            raise DimensionError(f"ground truth must be a non-empty 2-D map, got shape {ids.shape}")
        if not np.issubdtype(ids.dtype, np.integer):
            raise TypeError("ground truth ids must be integers")
        if ids.min(initial=0) < 0:
            raise ValueError("ground truth ids must be non-negative")
        ids = ids.astype(np.int64)
        ids.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        classes = {int(k): int(v) for k, v in self.classes.items()}
        missing = [i for i in self.instance_ids() if i not in classes]
        if missing:
            raise ValueError(f"instance ids without a class entry: {missing}")
        object.__setattr__(self, "classes", classes)

    @property
    def shape(self):
        return self.ids.shape

    def instance_ids(self):
        """Sorted positive ids present in the map."""
        u = np.unique(self.ids)
        return [int(i) for i in u if i > 0]

    def mask(self, instance_id):
        return self.ids == instance_id

    def permuted(self, mapping):
        """Relabel positive ids through ``mapping`` (a dict old -> new)."""
        new_ids = np.zeros_like(self.ids)
        for old in self.instance_ids():
            new_ids[self.ids == old] = mapping[old]
        classes = {mapping[k]: self.classes[k] for k in self.instance_ids()}
        return GroundTruthMap(new_ids, classes)


def as_image(data):
    """Validate and return an ``(H, W, C)`` float64 image."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or min(img.shape) < 1:
        raise DimensionError(f"image must be (H, W, C) with positive sizes, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def resize_nearest(gt: GroundTruthMap, factor: int) -> GroundTruthMap:
    """Downsample ``gt`` by ``factor`` keeping the top-left id of each block."""
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    h, w = gt.shape
    if h % factor or w % factor:
        raise DimensionError(f"factor {factor} does not divide map size {h}x{w}")
    if factor == 1:
        return gt
    ids = gt.ids[::factor, ::factor]
    present = set(int(i) for i in np.unique(ids))
    return GroundTruthMap(ids.copy(), {k: v for k, v in gt.classes.items() if k in present})


def foreground_mask(gt: GroundTruthMap) -> np.ndarray:
    return gt.ids > 0


def upsample_nearest(arr, factor):
    """Repeat every element of a 2-D array into a ``factor x factor`` block."""
    if factor == 1:
        return arr
    return np.repeat(np.repeat(arr, factor, axis=0), factor, axis=1)
