"""Forward values and analytic gradients of the variational instance loss.

Every term returns a :class:`LossValueGrad` whose ``grad`` is the exact
derivative of ``value`` with respect to the real label map ``f``. Terms are
means over their support so the weights do not depend on resolution.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .grid import DimensionError, GroundTruthMap


@dataclass(frozen=True)
class LossConfig:
    huber_theta: float = 0.1
    m1: float = 2.0
    m2: float = 1.0
    mu: float = 1.0
    nu: float = 1.0
    weight_binary: float = 1.0
    weight_pi: float = 1.0
    weight_ms: float = 1.0
    weight_quant: float = 1.0
    ms_variant: str = "cauchy"

    def __post_init__(self):
        if self.huber_theta <= 0 or self.m1 <= 0 or self.m2 <= 0:
            raise ValueError("huber_theta, m1 and m2 must be positive")
        if self.mu < 0 or self.nu < 0:
            raise ValueError("mu and nu must be non-negative")
        for name in ("weight_binary", "weight_pi", "weight_ms", "weight_quant"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.ms_variant not in ("cauchy", "truncated"):
            raise ValueError(f"unknown ms_variant {self.ms_variant!r}")


@dataclass
class LossValueGrad:
    value: float
    grad: np.ndarray
    terms: dict = field(default_factory=dict)


def huber(v, theta):
    """Huber loss ``L_h(v, theta)`` for ``v >= 0`` and its derivative."""
    if v < 0:
        raise ValueError(f"huber is defined for v >= 0, got {v}")
    if v < theta:
        return v * v / (2.0 * theta), v / theta
    return v - theta / 2.0, 1.0


def _huber_arr(v, theta):
    quad = v < theta
    return np.where(quad, v * v / (2.0 * theta), v - theta / 2.0), np.where(quad, v / theta, 1.0)


def _check_same_shape(f, gt):
    if f.shape != gt.shape:
        raise DimensionError(f"label map {f.shape} and ground truth {gt.shape} differ")


def binary_loss(f, gt: GroundTruthMap, cfg: LossConfig) -> LossValueGrad:
    f = np.asarray(f, dtype=np.float64)
    _check_same_shape(f, gt)
    fg = gt.ids > 0
    arg = np.where(fg, np.maximum(cfg.m1 - f, 0.0), np.maximum(f, 0.0))
    val, dh = _huber_arr(arg, cfg.huber_theta)
    active = np.where(fg, cfg.m1 - f > 0.0, f > 0.0)
    g = np.where(active, np.where(fg, -dh, dh), 0.0)
    n = f.size
    return LossValueGrad(float(val.sum() / n), g / n)


def pair_loss_term(f1, f2, same_instance, cfg: LossConfig):
    """Loss of one pixel pair and its (sub)gradients w.r.t. both labels."""
    val, grad = kernels.pair_loss(
        np.array([f1, f2], dtype=np.float64),
        np.array([0]),
        np.array([1]),
        np.array([bool(same_instance)]),
        cfg.huber_theta,
        cfg.m2,
    )
    return val, float(grad[0]), float(grad[1])


def permutation_invariant_loss(f, gt: GroundTruthMap, pairs, cfg: LossConfig) -> LossValueGrad:
    f = np.asarray(f, dtype=np.float64)
    _check_same_shape(f, gt)
    n_pairs = len(pairs)
    if n_pairs == 0:
        return LossValueGrad(0.0, np.zeros_like(f))
    a, b = pairs.a, pairs.b
    size = f.size
    if a.min() < 0 or b.min() < 0 or a.max() >= size or b.max() >= size:
        raise IndexError("pair index out of range")
    ids = gt.ids.ravel()
    same = ids[a] == ids[b]
    total, grad = kernels.pair_loss(f.ravel(), a, b, same, cfg.huber_theta, cfg.m2)
    return LossValueGrad(total / n_pairs, (grad / n_pairs).reshape(f.shape))


def _forward_diffs(f):
    if f.ndim != 2 or f.shape[0] < 2 or f.shape[1] < 2:
        raise DimensionError(f"smoothness terms need a map of at least 2x2, got {f.shape}")
    core = f[:-1, :-1]
    return core - f[:-1, 1:], core - f[1:, :-1]


def _scatter_diff_grad(shape, du, dv):
    # du = d/d(f[i,j] - f[i,j+1]), dv = d/d(f[i,j] - f[i+1,j])
    g = np.zeros(shape)
    g[:-1, :-1] += du + dv
    g[:-1, 1:] -= du
    g[1:, :-1] -= dv
    return g


def ms_cauchy_loss(f, cfg: LossConfig | None = None) -> LossValueGrad:
    """Cauchy surrogate ``log(u^2 + v^2 + 1)`` of the Mumford-Shah term."""
    f = np.asarray(f, dtype=np.float64)
    u, v = _forward_diffs(f)
    s = u * u + v * v + 1.0
    n = u.size
    g = _scatter_diff_grad(f.shape, 2.0 * u / s, 2.0 * v / s)
    return LossValueGrad(float(np.log(s).sum() / n), g / n)


def ms_truncated_loss(f, cfg: LossConfig) -> LossValueGrad:
    """Truncated quadratic ``min(mu * |grad f|^2, nu)``."""
    f = np.asarray(f, dtype=np.float64)
    u, v = _forward_diffs(f)
    q = cfg.mu * (u * u + v * v)
    quad = q <= cfg.nu
    n = u.size
    val = np.where(quad, q, cfg.nu)
    scale = np.where(quad, 2.0 * cfg.mu, 0.0)
    g = _scatter_diff_grad(f.shape, scale * u, scale * v)
    return LossValueGrad(float(val.sum() / n), g / n)


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantization_loss(f) -> LossValueGrad:
    """Mean distance to the nearest integer; rounding is held constant in the gradient."""
    f = np.asarray(f, dtype=np.float64)
    r = f - round_half_away(f)
    n = f.size
    return LossValueGrad(float(np.abs(r).sum() / n), np.sign(r) / n)


def ms_loss(f, cfg: LossConfig) -> LossValueGrad:
    if cfg.ms_variant == "truncated":
        return ms_truncated_loss(f, cfg)
    return ms_cauchy_loss(f, cfg)


TERM_NAMES = ("binary", "pi", "ms", "quant")


def total_loss(f, gt: GroundTruthMap, pairs, cfg: LossConfig) -> LossValueGrad:
    """Weighted sum of all four terms; per-term values land in ``terms``."""
    f = np.asarray(f, dtype=np.float64)
    _check_same_shape(f, gt)
    weights = {
        "binary": cfg.weight_binary,
        "pi": cfg.weight_pi,
        "ms": cfg.weight_ms,
        "quant": cfg.weight_quant,
    }
    value = 0.0
    grad = np.zeros_like(f)
    terms = {}
    for name in TERM_NAMES:
        w = weights[name]
        if name == "binary":
            part = binary_loss(f, gt, cfg)
        elif name == "pi":
            part = permutation_invariant_loss(f, gt, pairs, cfg)
        elif name == "ms":
            if w == 0 and min(f.shape) < 2:
                terms[name] = 0.0
                continue
            part = ms_loss(f, cfg)
        else:
            part = quantization_loss(f)
        terms[name] = part.value
        if w != 0:
            value += w * part.value
            grad += w * part.grad
    return LossValueGrad(value, grad, terms)
