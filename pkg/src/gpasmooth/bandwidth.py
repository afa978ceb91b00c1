"""Cross-validation bandwidth selection, distributed selectors and the AMISE bandwidth."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .kernels import InvalidBandwidthError, KernelSpec
from .moments import DENOMINATOR_EPS, Sample, local_moments

__all__ = [
    "WeightFn",
    "CandidateSet",
    "CVResult",
    "DegenerateCVError",
    "loo_cv",
    "cv_score",
    "minimize_cv",
    "oneshot_bandwidth",
    "pilot_bandwidth",
    "amise_optimal",
    "DEFAULT_TRIM",
    "DEFAULT_CH",
    "DEFAULT_CANDIDATES",
]

DEFAULT_TRIM = 0.05
DEFAULT_CH = 8.0
DEFAULT_CANDIDATES = 25


class DegenerateCVError(ValueError):
    pass


@dataclass(frozen=True)
class WeightFn:
    """Indicator weight on ``[lo + delta*(hi-lo), hi - delta*(hi-lo)]``."""

    delta: float = DEFAULT_TRIM
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.delta < 0.5:
            raise ValueError(f"trim fraction must lie in [0, 0.5), got {self.delta}")
        if not self.hi > self.lo:
            raise ValueError("weight support needs hi > lo")

    @property
    def support(self) -> tuple[float, float]:
        span = self.hi - self.lo
        return self.lo + self.delta * span, self.hi - self.delta * span

    def __call__(self, x):
        a, b = self.support
        x = np.asarray(x, dtype=float)
        return ((x >= a) & (x <= b)).astype(float)


@dataclass(frozen=True)
class CandidateSet:
    """Log-spaced bandwidths on ``[n_ref**-rate / c_h, c_h * n_ref**-rate]``."""

    n_ref: float
    c_h: float = DEFAULT_CH
    count: int = DEFAULT_CANDIDATES
    rate: float = 0.2

    def __post_init__(self):
        if self.n_ref < 1 or self.c_h <= 1.0 or self.count < 1 or self.rate <= 0:
            raise ValueError("candidate set needs n_ref >= 1, c_h > 1, count >= 1, rate > 0")

    @property
    def values(self) -> np.ndarray:
        center = self.n_ref ** (-self.rate)
        if self.count == 1:
            return np.array([center])
        return np.geomspace(center / self.c_h, center * self.c_h, self.count)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.count


class CVResult(NamedTuple):
    score: float
    n_used: int
    n_undefined: int
    n_trimmed: int

    @property
    def full_trim(self) -> bool:
        return self.n_trimmed == self.n_used + self.n_undefined + self.n_trimmed

    @property
    def degenerate(self) -> bool:
        return self.n_used == 0


def loo_estimates(sample: Sample, h: float, kernel: KernelSpec) -> np.ndarray:
    """Leave-one-out estimates at every sample point, in the sample's order.

    Full-sample sums at each ``X_i`` minus the point's own contribution
    ``K(0)/h``. NaN marks an empty leave-one-out window.
    """
    if sample.n < 2:
        raise ValueError("leave-one-out needs at least two observations")
    if sample.p == 1:
        order = np.argsort(sample.x1, kind="stable")
        srt = Sample(sample.x[order], sample.y[order], is_sorted=True)
    else:
        order = np.arange(sample.n)
        srt = sample
    stats = local_moments(srt, srt.x, kernel, h)
    self_w = kernel.value_at_zero / h**sample.p
    sw = stats.sum_w - self_w
    swy = stats.sum_wy - self_w * srt.y
    ok = np.abs(sw) * h**sample.p > DENOMINATOR_EPS * (sample.n - 1)
    est_sorted = np.full(sample.n, np.nan)
    est_sorted[ok] = swy[ok] / sw[ok]
    est = np.empty(sample.n)
    est[order] = est_sorted
    return est


def loo_cv(sample: Sample, h: float, kernel: KernelSpec, weight: WeightFn | None = None) -> CVResult:
    """Trimmed leave-one-out CV score with diagnostics.

    Undefined leave-one-out estimates contribute 0 and are counted.
    """
    if not (h > 0 and math.isfinite(h)):
        raise InvalidBandwidthError(f"bandwidth must be positive, got {h!r}")
    weight = WeightFn() if weight is None else weight
    w = weight(sample.x[:, 0]) if sample.p == 1 else np.prod(weight(sample.x), axis=1)
    est = loo_estimates(sample, h, kernel)
    trimmed = w == 0
    undefined = np.isnan(est) & ~trimmed
    used = ~trimmed & ~undefined
    resid = np.where(used, sample.y - np.where(used, est, 0.0), 0.0)
    score = float(np.sum(resid**2 * w) / sample.n)
    return CVResult(score, int(used.sum()), int(undefined.sum()), int(trimmed.sum()))


def cv_score(sample: Sample, h: float, kernel: KernelSpec, weight: WeightFn | None = None) -> float:
    return loo_cv(sample, h, kernel, weight).score


def minimize_cv(
    sample: Sample,
    candidates,
    kernel: KernelSpec,
    weight: WeightFn | None = None,
    score_fn: Callable[[float], CVResult | float] | None = None,
    return_scores: bool = False,
):
    """Candidate bandwidth with the smallest CV score; ties go to the smaller h.

    ``score_fn`` replaces the CV evaluation (a float or a ``CVResult`` per h).
    """
    hs = np.sort(np.asarray(candidates, dtype=float))
    if hs.size == 0:
        raise ValueError("empty candidate set")
    if sample.p == 1 and score_fn is None:
        sample = sample.sorted()
    scores = np.full(hs.size, np.inf)
    for i, h in enumerate(hs):
        res = score_fn(h) if score_fn is not None else loo_cv(sample, h, kernel, weight)
        if isinstance(res, CVResult):
            if res.degenerate:
                continue
            res = res.score
        scores[i] = res
    if not np.any(np.isfinite(scores)):
        raise DegenerateCVError("every candidate bandwidth gave a degenerate CV score")
    best = float(hs[int(np.argmin(scores))])
    return (best, hs, scores) if return_scores else best


def oneshot_bandwidth(local_selected, M: int | None = None, rate_exponent: float = 0.2) -> float:
    """``M**-rate * mean(local)`` for the per-machine CV bandwidths."""
    hs = np.asarray(local_selected, dtype=float).reshape(-1)
    if hs.size == 0:
        raise ValueError("no local bandwidths")
    if M is None:
        M = hs.size
    if M != hs.size:
        raise ValueError(f"expected {M} local bandwidths, got {hs.size}")
    if np.any(~(hs > 0)):
        raise InvalidBandwidthError("local bandwidths must be positive")
    return float(M ** (-rate_exponent) * hs.mean())


def pilot_bandwidth(
    pilot: Sample,
    N: int,
    kernel: KernelSpec,
    weight: WeightFn | None = None,
    candidates=None,
    rate_exponent: float = 0.2,
) -> float:
    """CV on the pooled pilot sample, rescaled by ``(N / n0)**-rate``."""
    n0 = pilot.n
    if n0 < 2:
        raise ValueError("pilot sample needs at least two observations")
    if candidates is None:
        candidates = CandidateSet(n0, rate=rate_exponent)
    h0 = minimize_cv(pilot, candidates, kernel, weight)
    return float((N / n0) ** (-rate_exponent) * h0)


def amise_optimal(B_bar: float, V_bar: float, N: float) -> float:
    """``(V / (4 B))**(1/5) * N**(-1/5)``."""
    if not (B_bar > 0 and V_bar > 0 and N > 0):
        raise ValueError("AMISE constants and N must be positive")
    return (V_bar / (4.0 * B_bar)) ** 0.2 * N ** (-0.2)
