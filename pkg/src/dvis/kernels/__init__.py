"""Hot inner loops, dispatched to numba or numpy.

Both backends expose the same functions with the same semantics; the
numba one is used unless ``DVIS_DISABLE_NUMBA`` is set.
"""
import numpy as np

from .._accel import USE_NUMBA
from . import _numpy as numpy_impl

if USE_NUMBA:
    from . import _numba as numba_impl
    _impl = numba_impl
else:  # pragma: no cover - exercised by the env-flag test in a subprocess
    numba_impl = None
    _impl = numpy_impl

BACKEND = "numba" if USE_NUMBA else "numpy"


def im2col(xp, k, stride, out_h, out_w):
    return _impl.im2col(np.ascontiguousarray(xp), k, stride, out_h, out_w)


def col2im(cols, c, hp, wp, k, stride, out_h, out_w):
    return _impl.col2im(np.ascontiguousarray(cols), c, hp, wp, k, stride, out_h, out_w)


def pair_loss(f, a, b, same, theta, m2):
    return _impl.pair_loss(
        np.ascontiguousarray(f, dtype=np.float64),
        np.ascontiguousarray(a, dtype=np.int64),
        np.ascontiguousarray(b, dtype=np.int64),
        np.ascontiguousarray(same, dtype=np.bool_),
        float(theta),
        float(m2),
    )


def stratified_pairs(fg, offsets):
    return _impl.stratified_pairs(
        np.ascontiguousarray(fg, dtype=np.bool_), np.ascontiguousarray(offsets, dtype=np.int64)
    )


def mean_shift_modes(sv, csum, start, bandwidth, eps, max_iter):
    return _impl.mean_shift_modes(
        np.ascontiguousarray(sv, dtype=np.float64),
        np.ascontiguousarray(csum, dtype=np.float64),
        np.ascontiguousarray(start, dtype=np.float64),
        float(bandwidth),
        float(eps),
        int(max_iter),
    )
