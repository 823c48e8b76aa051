"""Pure-numpy versions of the hot loops."""
import numpy as np


def im2col(xp, k, stride, out_h, out_w):
    c = xp.shape[0]
    cols = np.empty((c, k, k, out_h, out_w), dtype=xp.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, di, dj] = xp[:, di:di + stride * out_h:stride, dj:dj + stride * out_w:stride]
    return cols.reshape(c * k * k, out_h * out_w)


def col2im(cols, c, hp, wp, k, stride, out_h, out_w):
    xp = np.zeros((c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(c, k, k, out_h, out_w)
    for di in range(k):
        for dj in range(k):
            xp[:, di:di + stride * out_h:stride, dj:dj + stride * out_w:stride] += cols[:, di, dj]
    return xp


def pair_loss(f, a, b, same, theta, m2):
    """Summed permutation-invariant pair loss and its gradient w.r.t. ``f``."""
    f1 = f[a]
    f2 = f[b]
    diff = np.maximum(f1, 0.0) - np.maximum(f2, 0.0)
    fd = np.abs(diff)
    arg = np.where(same, fd, np.maximum(m2 - fd, 0.0))
    quad = arg < theta
    val = np.where(quad, arg * arg / (2.0 * theta), arg - theta / 2.0)
    dh = np.where(quad, arg / theta, 1.0)
    # d(loss)/d(fd)
    dfd = np.where(same, dh, np.where(m2 - fd > 0.0, -dh, 0.0))
    g = dfd * np.sign(diff)
    g1 = np.where(f1 > 0.0, g, 0.0)
    g2 = np.where(f2 > 0.0, -g, 0.0)
    n = f.shape[0]
    grad = np.bincount(a, weights=g1, minlength=n) + np.bincount(b, weights=g2, minlength=n)
    return float(val.sum()), grad


def stratified_pairs(fg, offsets):
    h, w = fg.shape
    n_off = offsets.shape[0]
    if n_off == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    rows, cols = np.divmod(np.arange(h * w, dtype=np.int64), w)
    rb = rows[:, None] + offsets[None, :, 1]
    cb = cols[:, None] + offsets[None, :, 0]
    inside = (rb >= 0) & (rb < h) & (cb >= 0) & (cb < w)
    flat_fg = fg.ravel()
    b_idx = np.where(inside, rb * w + cb, 0)
    keep = inside & (flat_fg[:, None] | flat_fg[b_idx])
    anchor, off = np.nonzero(keep)
    return anchor.astype(np.int64), b_idx[anchor, off].astype(np.int64)


def mean_shift_modes(sv, csum, start, bandwidth, eps, max_iter):
    """Flat-kernel 1-D mean shift of every start point over sorted values ``sv``."""
    m = start.astype(np.float64).copy()
    active = np.ones(m.shape[0], dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        cur = m[active]
        lo = np.searchsorted(sv, cur - bandwidth, side="left")
        hi = np.searchsorted(sv, cur + bandwidth, side="right")
        new = (csum[hi] - csum[lo]) / (hi - lo)
        done = np.abs(new - cur) < eps
        m[active] = new
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return m
