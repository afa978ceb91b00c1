"""Compiled inner loops for windowed kernel sums over sorted samples."""

import numba as nb
import numpy as np


@nb.njit(cache=True, nogil=True)
def _kernel(u, coefs):
    t = u * u
    acc = coefs[coefs.shape[0] - 1]
    for k in range(coefs.shape[0] - 2, -1, -1):
        acc = acc * t + coefs[k]
    return acc


@nb.njit(cache=True, nogil=True)
def windowed_moments(xs, ys, queries, h, coefs):
    """Kernel sums at each query, visiting only sorted points within ``h``.

    ``xs`` must be ascending. Returns ``(sum_w, sum_wy, count)``; both sums are
    Kahan-compensated and scaled by ``1/h`` once at the end.
    """
    nq = queries.shape[0]
    n = xs.shape[0]
    sum_w = np.zeros(nq)
    sum_wy = np.zeros(nq)
    count = np.zeros(nq, dtype=np.int64)
    inv = 1.0 / h
    for q in range(nq):
        x0 = queries[q]
        # one-element margin on each side; membership is decided by |u| <= 1
        lo = np.searchsorted(xs, x0 - h, side="left")
        hi = np.searchsorted(xs, x0 + h, side="right")
        if lo > 0:
            lo -= 1
        if hi < n:
            hi += 1
        sw = 0.0
        cw = 0.0
        swy = 0.0
        cwy = 0.0
        c = 0
        for i in range(lo, hi):
            u = (xs[i] - x0) * inv
            if abs(u) > 1.0:
                continue
            k = _kernel(u, coefs)
            ky = k * ys[i]
            c += 1
            a = k - cw
            t = sw + a
            cw = (t - sw) - a
            sw = t
            a = ky - cwy
            t = swy + a
            cwy = (t - swy) - a
            swy = t
        sum_w[q] = sw * inv
        sum_wy[q] = swy * inv
        count[q] = c
    return sum_w, sum_wy, count


def warmup():
    xs = np.array([0.0, 1.0])
    windowed_moments(xs, xs, xs, 1.0, np.array([0.75, -0.75]))
