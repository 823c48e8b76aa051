"""Deterministic synthetic scenes with instance ground truth.

Shapes are painted back to front on a textured background. Optionally a
background-coloured bar is drawn across one instance so that its visible
region falls apart into several pieces that still share one id.
"""
from __future__ import annotations

import colorsys
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .grid import GroundTruthMap

SHAPES = ("disk", "rectangle", "triangle")


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 64
    min_instances: int = 2
    max_instances: int = 8
    shape_classes: tuple = SHAPES
    occluder_prob: float = 0.5
    noise_std: float = 0.05
    texture_amplitude: float = 0.06
    color_collision_prob: float = 0.1
    min_visible: int = 30
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape_classes", tuple(self.shape_classes))
        if self.min_instances < 1 or self.max_instances < self.min_instances:
            raise ValueError("need 1 <= min_instances <= max_instances")
        for name in ("occluder_prob", "color_collision_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        unknown = set(self.shape_classes) - set(SHAPES)
        if unknown or not self.shape_classes:
            raise ValueError(f"unsupported shape classes {sorted(unknown)}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    def class_index(self, shape):
        return self.shape_classes.index(shape) + 1

    def to_dict(self):
        d = asdict(self)
        d["shape_classes"] = list(self.shape_classes)
        return d


@dataclass
class SyntheticScene:
    image: np.ndarray
    gt: GroundTruthMap
    instances: list = field(default_factory=list)


# one saturated hue per possible instance (max 8 per scene); background is
# grey so none of them can be confused with it
PALETTE = np.array([colorsys.hsv_to_rgb(i / 8.0, 0.85, 0.95 if i % 2 == 0 else 0.75) for i in range(8)])
BACKGROUND = 0.45


def _shape_mask(rng, shape, h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    cy = rng.uniform(4, h - 4)
    cx = rng.uniform(4, w - 4)
    if shape == "disk":
        r = rng.uniform(5.0, 11.0)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        params = {"cx": cx, "cy": cy, "r": r}
    elif shape == "rectangle":
        hh = rng.uniform(4.0, 11.0)
        hw = rng.uniform(4.0, 11.0)
        mask = (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)
        params = {"cx": cx, "cy": cy, "half_h": hh, "half_w": hw}
    else:
        rad = rng.uniform(8.0, 14.0)
        rot = rng.uniform(0, 2 * np.pi)
        ang = rot + np.array([0.0, 2.0, 4.0]) * np.pi / 3 + rng.uniform(-0.25, 0.25, 3)
        vx = cx + rad * np.cos(ang)
        vy = cy + rad * np.sin(ang)
        mask = np.ones((h, w), dtype=bool)
        for i in range(3):
            j = (i + 1) % 3
            # inside test: same side of every edge as the opposite vertex
            k = (i + 2) % 3
            edge = (vx[j] - vx[i]) * (yy - vy[i]) - (vy[j] - vy[i]) * (xx - vx[i])
            ref = (vx[j] - vx[i]) * (vy[k] - vy[i]) - (vy[j] - vy[i]) * (vx[k] - vx[i])
            mask &= edge * np.sign(ref) >= 0
        params = {"vertices": [[float(a), float(b)] for a, b in zip(vx, vy)]}
    return mask, params


def _background(rng, h, w, amplitude):
    yy, xx = np.mgrid[0:h, 0:w]
    tex = np.zeros((h, w))
    for _ in range(2):
        fy, fx = rng.uniform(-0.4, 0.4, 2)
        tex += np.sin(fy * yy + fx * xx + rng.uniform(0, 2 * np.pi))
    tex *= amplitude / 2.0
    return np.repeat((BACKGROUND + tex)[:, :, None], 3, axis=2)


def _visible_ok(canvas, n, min_visible):
    counts = np.bincount(canvas.ravel(), minlength=n + 1)[1:n + 1]
    return bool(np.all(counts >= min_visible))


def _place_occluder(rng, canvas, n, min_visible):
    """Draw a bar over one instance so it splits; returns (bar_mask, index) or None."""
    h, w = canvas.shape
    counts = np.bincount(canvas.ravel(), minlength=n + 1)
    order = [int(i) for i in np.argsort(-counts[1:], kind="stable") + 1]
    for target in order:
        ys, xs = np.nonzero(canvas == target)
        y0, y1, x0, x1 = ys.min(), ys.max(), xs.min(), xs.max()
        for _ in range(12):
            thick = int(rng.integers(4, 7))
            bar = np.zeros((h, w), dtype=bool)
            if rng.random() < 0.5:
                if y1 - y0 < thick + 6:
                    continue
                top = int(rng.integers(y0 + 3, y1 - thick - 2))
                bar[top:top + thick, max(x0 - 2, 0):x1 + 3] = True
            else:
                if x1 - x0 < thick + 6:
                    continue
                left = int(rng.integers(x0 + 3, x1 - thick - 2))
                bar[max(y0 - 2, 0):y1 + 3, left:left + thick] = True
            trial = np.where(bar, 0, canvas)
            if not _visible_ok(trial, n, min_visible):
                continue
            # the split has to survive stride-2 sampling of the ground truth
            for view in (trial, trial[::2, ::2]):
                labels, ncomp = ndimage.label(view == target)
                if ncomp < 2:
                    break
            else:
                return bar, target
    return None


def generate(cfg: SceneConfig, index: int, perm_seed=None) -> SyntheticScene:
    """Scene number ``index`` of the stream defined by ``cfg.seed``.

    ``perm_seed`` only changes how instance ids are numbered, never which
    pixels belong together.
    """
    rng = np.random.default_rng([cfg.seed, index, 0])
    h, w = cfg.height, cfg.width
    image = _background(rng, h, w, cfg.texture_amplitude)
    bg = image.copy()
    canvas = np.zeros((h, w), dtype=np.int64)
    target_n = int(rng.integers(cfg.min_instances, cfg.max_instances + 1))
    placed = []
    for _ in range(target_n):
        shape = cfg.shape_classes[int(rng.integers(len(cfg.shape_classes)))]
        n = len(placed) + 1
        for _attempt in range(100):
            mask, params = _shape_mask(rng, shape, h, w)
            trial = np.where(mask, n, canvas)
            if _visible_ok(trial, n, cfg.min_visible):
                canvas = trial
                break
        else:
            continue
        same = [p for p in placed if p["shape"] == shape]
        if same and rng.random() < cfg.color_collision_prob:
            color_idx = same[int(rng.integers(len(same)))]["color_index"]
        else:
            used = {p["color_index"] for p in placed}
            free = [i for i in range(len(PALETTE)) if i not in used] or list(range(len(PALETTE)))
            color_idx = free[int(rng.integers(len(free)))]
        placed.append({"shape": shape, "params": params, "color_index": int(color_idx)})
    if not placed:  # pragma: no cover - an empty canvas always accepts the first shape
        raise RuntimeError("could not place any instance")
    n = len(placed)

    occluded = None
    if rng.random() < cfg.occluder_prob:
        res = _place_occluder(rng, canvas, n, cfg.min_visible)
        if res is not None:
            bar, occluded = res
            canvas = np.where(bar, 0, canvas)

    for k, inst in enumerate(placed, start=1):
        image[canvas == k] = PALETTE[inst["color_index"]]
    image[canvas == 0] = bg[canvas == 0]
    if cfg.noise_std > 0:
        image = image + rng.normal(0.0, cfg.noise_std, image.shape)
    image = np.clip(image, 0.0, 1.0)

    prng = np.random.default_rng([cfg.seed, index, 1] if perm_seed is None else [perm_seed, index, 2])
    perm = prng.permutation(n) + 1
    ids = np.zeros_like(canvas)
    classes = {}
    instances = []
    for k, inst in enumerate(placed, start=1):
        new_id = int(perm[k - 1])
        ids[canvas == k] = new_id
        classes[new_id] = cfg.class_index(inst["shape"])
        instances.append({
            "id": new_id,
            "class": classes[new_id],
            "shape": inst["shape"],
            "color": [float(c) for c in PALETTE[inst["color_index"]]],
            "params": inst["params"],
            "occluded": occluded == k,
        })
    return SyntheticScene(image=image, gt=GroundTruthMap(ids, classes), instances=instances)


class SyntheticDataset:
    """``count`` scenes starting at ``start``; indexable and iterable."""

    def __init__(self, cfg: SceneConfig, count: int, start: int = 0):
        if count < 1:
            raise ValueError("dataset must contain at least one scene")
        self.cfg = cfg
        self.count = count
        self.start = start
        self._cache = {}

    def __len__(self):
        return self.count

    def __getitem__(self, i):
        if not 0 <= i < self.count:
            raise IndexError(i)
        if i not in self._cache:
            self._cache[i] = generate(self.cfg, self.start + i)
        return self._cache[i]

    def __iter__(self):
        for i in range(self.count):
            yield self[i]
