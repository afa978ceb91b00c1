"""Local kernel moment statistics and Nadaraya-Watson estimators.

Undefined estimates (an empty kernel window) are encoded as ``NaN``. Samples
reject non-finite values at construction, so a ``NaN`` estimate can only mean
Undefined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from . import _accel
from .kernels import InvalidBandwidthError, InvalidDimensionError, KernelSpec, evaluate

__all__ = [
    "Sample",
    "MomentStats",
    "LayoutMismatchError",
    "UNDEFINED",
    "DENOMINATOR_EPS",
    "local_moments",
    "merge",
    "merge_all",
    "nw_from_stats",
    "nw_estimate",
    "nw_multivariate",
    "oneshot_combine",
    "is_undefined",
]

UNDEFINED = float("nan")
DENOMINATOR_EPS = 1e-12
# max elements of one dense (queries x sample) block
_BLOCK = 1 << 21


class LayoutMismatchError(ValueError):
    pass


def is_undefined(value):
    return np.isnan(value)


@dataclass(frozen=True, eq=False)
class Sample:
    """Covariates ``x`` of shape (N, p) and responses ``y`` of shape (N,).

    ``is_sorted`` marks a univariate sample whose ``x`` is ascending; it turns
    on the windowed evaluation path.
    """

    x: np.ndarray
    y: np.ndarray
    is_sorted: bool = False

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise InvalidDimensionError("x must be a vector or an (N, p) matrix")
        if x.shape[0] != y.shape[0]:
            raise InvalidDimensionError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")
        if y.shape[0] < 1:
            raise ValueError("sample must hold at least one observation")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("sample contains NaN or Inf")
        if self.is_sorted and (x.shape[1] != 1 or np.any(np.diff(x[:, 0]) < 0)):
            raise ValueError("sample flagged sorted but x is not ascending")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def x1(self) -> np.ndarray:
        """The covariate column of a univariate sample."""
        if self.p != 1:
            raise InvalidDimensionError("sample is multivariate")
        return self.x[:, 0]

    def __len__(self):
        return self.n

    def take(self, index) -> "Sample":
        index = np.asarray(index)
        return Sample(self.x[index], self.y[index])

    def sorted(self) -> "Sample":
        """Copy ordered by covariate (stable), flagged for the windowed path."""
        if self.is_sorted:
            return self
        order = np.argsort(self.x1, kind="stable")
        return Sample(self.x[order], self.y[order], is_sorted=True)


@dataclass(frozen=True, eq=False)
class MomentStats:
    """Per-query kernel sums; the additive unit exchanged between machines.

    ``n`` is the number of observations that contributed, used to scale the
    Undefined threshold.
    """

    points: np.ndarray
    sum_w: np.ndarray
    sum_wy: np.ndarray
    count: np.ndarray
    n: int
    h: float
    p: int = field(default=1)

    def __len__(self):
        return self.sum_w.shape[0]

    @classmethod
    def zeros(cls, points, h: float, p: int = 1) -> "MomentStats":
        pts = np.asarray(points, dtype=float)
        q = pts.shape[0]
        return cls(pts, np.zeros(q), np.zeros(q), np.zeros(q, dtype=np.int64), 0, h, p)

    def __add__(self, other):
        return merge(self, other)

    def defined(self) -> np.ndarray:
        return np.abs(self.sum_w) * self.h**self.p > DENOMINATOR_EPS * max(self.n, 1)


def _as_points(points, p):
    pts = np.asarray(points, dtype=float)
    if p == 1:
        if pts.ndim == 2 and pts.shape[1] == 1:
            pts = pts[:, 0]
        if pts.ndim == 0:
            pts = pts.reshape(1)
        if pts.ndim != 1:
            raise InvalidDimensionError("univariate sample needs scalar query points")
    else:
        if pts.ndim == 1 and pts.shape[0] == p:
            pts = pts.reshape(1, p)
        if pts.ndim != 2 or pts.shape[1] != p:
            raise InvalidDimensionError(f"query points must have {p} coordinates")
    if pts.shape[0] == 0:
        raise ValueError("no query points")
    return pts


def _dense_moments(sample, pts, kernel, h):
    x = sample.x
    y = sample.y
    q = pts.shape[0]
    p = sample.p
    sum_w = np.empty(q)
    sum_wy = np.empty(q)
    count = np.empty(q, dtype=np.int64)
    step = max(1, _BLOCK // max(sample.n * p, 1))
    pts2 = pts.reshape(q, p)
    for start in range(0, q, step):
        block = pts2[start:start + step]
        u = (x[None, :, :] - block[:, None, :]) / h
        inside = np.all(np.abs(u) <= 1.0, axis=2)
        k = np.prod(evaluate(kernel, u), axis=2) / h**p
        k = np.where(inside, k, 0.0)
        sum_w[start:start + step] = k.sum(axis=1)
        sum_wy[start:start + step] = (k * y[None, :]).sum(axis=1)
        count[start:start + step] = inside.sum(axis=1)
    return sum_w, sum_wy, count


def local_moments(sample: Sample, points, kernel: KernelSpec, h: float) -> MomentStats:
    """Kernel weight sums and weighted response sums at every query point."""
    if not (h > 0 and math.isfinite(h)):
        raise InvalidBandwidthError(f"bandwidth must be positive, got {h!r}")
    pts = _as_points(points, sample.p)
    if sample.is_sorted:
        sum_w, sum_wy, count = _accel.windowed_moments(
            sample.x1, sample.y, np.ascontiguousarray(pts), float(h), kernel.coefficients
        )
    else:
        sum_w, sum_wy, count = _dense_moments(sample, pts, kernel, h)
    return MomentStats(pts, sum_w, sum_wy, count, sample.n, float(h), sample.p)


def merge(a: MomentStats, b: MomentStats) -> MomentStats:
    """Fieldwise sum of two statistics over the same query layout."""
    if a.points.shape != b.points.shape or not np.array_equal(a.points, b.points):
        raise LayoutMismatchError("moment statistics cover different query points")
    if a.h != b.h or a.p != b.p:
        raise LayoutMismatchError("moment statistics use different bandwidths or dimensions")
    return MomentStats(
        a.points,
        a.sum_w + b.sum_w,
        a.sum_wy + b.sum_wy,
        a.count + b.count,
        a.n + b.n,
        a.h,
        a.p,
    )


def merge_all(stats) -> MomentStats:
    stats = list(stats)
    if not stats:
        raise ValueError("nothing to merge")
    return reduce(merge, stats)


def nw_from_stats(stats: MomentStats) -> np.ndarray:
    """``sum_wy / sum_w`` per query point; NaN where the denominator is negligible."""
    ok = stats.defined()
    out = np.full(len(stats), UNDEFINED)
    out[ok] = stats.sum_wy[ok] / stats.sum_w[ok]
    return out


def _scalar_or_array(values, x):
    return float(values[0]) if np.ndim(x) == 0 else values


def nw_estimate(sample: Sample, x, kernel: KernelSpec, h: float):
    """Nadaraya-Watson estimate at ``x`` (scalar or array) from a univariate sample."""
    est = nw_from_stats(local_moments(sample, x, kernel, h))
    return _scalar_or_array(est, x)


def nw_multivariate(sample: Sample, x, kernel: KernelSpec, h: float):
    """Product-kernel Nadaraya-Watson estimate for ``p >= 2``.

    ``x`` is a single p-vector (returns a float) or a (Q, p) array.
    """
    if sample.p < 2:
        raise InvalidDimensionError("nw_multivariate needs p >= 2")
    arr = np.asarray(x, dtype=float)
    est = nw_from_stats(local_moments(sample, arr, kernel, h))
    return float(est[0]) if arr.ndim == 1 else est


def oneshot_combine(local_estimates, policy: str = "strict"):
    """Average of per-machine estimates along the first axis.

    With ``policy="strict"`` any Undefined local estimate makes the result
    Undefined. ``policy="defined"`` averages whichever machines are defined.
    """
    arr = np.asarray(local_estimates, dtype=float)
    if arr.ndim == 0 or arr.shape[0] == 0:
        raise ValueError("one-shot combination needs at least one local estimate")
    if policy == "strict":
        out = arr.mean(axis=0)
    elif policy == "defined":
        with np.errstate(invalid="ignore"):
            counts = np.sum(~np.isnan(arr), axis=0)
            out = np.where(counts > 0, np.nansum(arr, axis=0) / np.maximum(counts, 1), UNDEFINED)
    else:
        raise ValueError(f"unknown one-shot policy {policy!r}")
    return float(out) if np.ndim(out) == 0 else out
