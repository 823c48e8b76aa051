"""Numba-compiled versions of the hot loops; must agree with ``_numpy``."""
import numpy as np
from numba import njit

from .._accel import numba_default


@njit(**numba_default)
def im2col(xp, k, stride, out_h, out_w):
    c = xp.shape[0]
    cols = np.empty((c * k * k, out_h * out_w), dtype=xp.dtype)
    for ch in range(c):
        for di in range(k):
            for dj in range(k):
                row = (ch * k + di) * k + dj
                for i in range(out_h):
                    base = i * out_w
                    src = di + stride * i
                    for j in range(out_w):
                        cols[row, base + j] = xp[ch, src, dj + stride * j]
    return cols


@njit(**numba_default)
def col2im(cols, c, hp, wp, k, stride, out_h, out_w):
    xp = np.zeros((c, hp, wp), dtype=cols.dtype)
    for ch in range(c):
        for di in range(k):
            for dj in range(k):
                row = (ch * k + di) * k + dj
                for i in range(out_h):
                    base = i * out_w
                    dst = di + stride * i
                    for j in range(out_w):
                        xp[ch, dst, dj + stride * j] += cols[row, base + j]
    return xp


@njit(**numba_default)
def pair_loss(f, a, b, same, theta, m2):
    n = f.shape[0]
    grad = np.zeros(n)
    total = 0.0
    for p in range(a.shape[0]):
        f1 = f[a[p]]
        f2 = f[b[p]]
        r1 = f1 if f1 > 0.0 else 0.0
        r2 = f2 if f2 > 0.0 else 0.0
        diff = r1 - r2
        fd = abs(diff)
        if same[p]:
            arg = fd
        else:
            arg = m2 - fd
            if arg < 0.0:
                arg = 0.0
        if arg < theta:
            total += arg * arg / (2.0 * theta)
            dh = arg / theta
        else:
            total += arg - theta / 2.0
            dh = 1.0
        if same[p]:
            dfd = dh
        elif m2 - fd > 0.0:
            dfd = -dh
        else:
            dfd = 0.0
        if diff > 0.0:
            g = dfd
        elif diff < 0.0:
            g = -dfd
        else:
            g = 0.0
        if f1 > 0.0:
            grad[a[p]] += g
        if f2 > 0.0:
            grad[b[p]] -= g
    return total, grad


@njit(**numba_default)
def _stratified_count(fg, offsets):
    h, w = fg.shape
    count = 0
    for r in range(h):
        for c in range(w):
            for o in range(offsets.shape[0]):
                rb = r + offsets[o, 1]
                cb = c + offsets[o, 0]
                if rb < 0 or rb >= h or cb < 0 or cb >= w:
                    continue
                if fg[r, c] or fg[rb, cb]:
                    count += 1
    return count


@njit(**numba_default)
def _stratified_fill(fg, offsets, a, b):
    h, w = fg.shape
    k = 0
    for r in range(h):
        for c in range(w):
            for o in range(offsets.shape[0]):
                rb = r + offsets[o, 1]
                cb = c + offsets[o, 0]
                if rb < 0 or rb >= h or cb < 0 or cb >= w:
                    continue
                if fg[r, c] or fg[rb, cb]:
                    a[k] = r * w + c
                    b[k] = rb * w + cb
                    k += 1


def stratified_pairs(fg, offsets):
    fg = np.ascontiguousarray(fg, dtype=np.bool_)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    n = _stratified_count(fg, offsets)
    a = np.empty(n, dtype=np.int64)
    b = np.empty(n, dtype=np.int64)
    _stratified_fill(fg, offsets, a, b)
    return a, b


@njit(**numba_default)
def mean_shift_modes(sv, csum, start, bandwidth, eps, max_iter):
    out = np.empty(start.shape[0])
    for p in range(start.shape[0]):
        m = start[p]
        for _ in range(max_iter):
            lo = np.searchsorted(sv, m - bandwidth, side="left")
            hi = np.searchsorted(sv, m + bandwidth, side="right")
            new = (csum[hi] - csum[lo]) / (hi - lo)
            shift = abs(new - m)
            m = new
            if shift < eps:
                break
        out[p] = m
    return out
