"""Simulation settings, truth-referenced metrics and analytic bandwidth oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad

from .bandwidth import WeightFn, amise_optimal
from .kernels import KernelSpec, moment, square_moment
from .moments import Sample

__all__ = [
    "MeanFunction",
    "CovariateLaw",
    "SimSetting",
    "SyntheticData",
    "MU1",
    "MU2",
    "MU3",
    "UNIFORM01",
    "BETA23",
    "SETTINGS",
    "get_setting",
    "generate",
    "bias_variance_fns",
    "amise_constants",
    "optimal_bandwidth",
    "rmse",
    "rmpe",
    "mrae",
    "central_difference",
]

FD_STEP = 1e-5


@dataclass(frozen=True)
class MeanFunction:
    """A mean function with optional closed-form first and second derivatives."""

    name: str
    fn: Callable
    d1: Callable | None = None
    d2: Callable | None = None

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))

    def first(self, x):
        if self.d1 is not None:
            return self.d1(np.asarray(x, dtype=float))
        return _checked_difference(self.fn, x, 1)

    def second(self, x):
        if self.d2 is not None:
            return self.d2(np.asarray(x, dtype=float))
        return _checked_difference(self.fn, x, 2)


def central_difference(fn, x, order, step=FD_STEP):
    x = np.asarray(x, dtype=float)
    if order == 1:
        return (fn(x + step) - fn(x - step)) / (2 * step)
    if order == 2:
        return (fn(x + step) - 2 * fn(x) + fn(x - step)) / step**2
    raise ValueError("only first and second differences are supported")


def _checked_difference(fn, x, order):
    value = central_difference(fn, x, order, FD_STEP)
    # second differences at step 1e-6 are rounding-dominated, so the
    # cross-check step goes coarser for order 2
    check_step = FD_STEP / 10 if order == 1 else FD_STEP * 10
    check = central_difference(fn, x, order, check_step)
    scale = np.maximum(np.abs(check), 1.0)
    if np.any(np.abs(value - check) > 1e-4 * scale):
        raise ArithmeticError("finite-difference derivative is unstable at this point")
    return value


def _mu1(x):
    t = x - 0.5
    return 4 * t + 2 * np.exp(-128 * t * t)


def _mu1_d1(x):
    t = x - 0.5
    return 4 - 512 * t * np.exp(-128 * t * t)


def _bump_d2(t):
    return 2 * np.exp(-128 * t * t) * (65536 * t * t - 256)


def _mu1_d2(x):
    return _bump_d2(x - 0.5)


def _mu2(x):
    t = x - 0.5
    return np.sin(8 * t) + 2 * np.exp(-128 * t * t)


def _mu2_d1(x):
    t = x - 0.5
    return 8 * np.cos(8 * t) - 512 * t * np.exp(-128 * t * t)


def _mu2_d2(x):
    t = x - 0.5
    return -64 * np.sin(8 * t) + _bump_d2(t)


_A3 = 2.1 * math.pi
_B3 = 0.05


def _mu3(x):
    return 24 * np.sqrt(x * (1 - x)) * np.sin(_A3 / (x + _B3))


def _mu3_parts(x):
    g = np.sqrt(x * (1 - x))
    g1 = (1 - 2 * x) / (2 * g)
    g2 = -1 / (4 * g**3)
    phi = _A3 / (x + _B3)
    phi1 = -_A3 / (x + _B3) ** 2
    phi2 = 2 * _A3 / (x + _B3) ** 3
    s = np.sin(phi)
    s1 = np.cos(phi) * phi1
    s2 = -np.sin(phi) * phi1**2 + np.cos(phi) * phi2
    return g, g1, g2, s, s1, s2


def _mu3_d1(x):
    g, g1, _, s, s1, _ = _mu3_parts(x)
    return 24 * (g1 * s + g * s1)


def _mu3_d2(x):
    g, g1, g2, s, s1, s2 = _mu3_parts(x)
    return 24 * (g2 * s + 2 * g1 * s1 + g * s2)


MU1 = MeanFunction("mu1", _mu1, _mu1_d1, _mu1_d2)
MU2 = MeanFunction("mu2", _mu2, _mu2_d1, _mu2_d2)
MU3 = MeanFunction("mu3", _mu3, _mu3_d1, _mu3_d2)


@dataclass(frozen=True)
class CovariateLaw:
    """Covariate density on ``support`` with its derivative and a sampler."""

    name: str
    pdf: Callable
    dpdf: Callable
    sampler: Callable  # (rng, n) -> array
    support: tuple = (0.0, 1.0)


def _unif_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.where((x >= 0) & (x <= 1), 1.0, 0.0)


def _beta_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.where((x >= 0) & (x <= 1), 12 * x * (1 - x) ** 2, 0.0)


def _beta_dpdf(x):
    x = np.asarray(x, dtype=float)
    return np.where((x >= 0) & (x <= 1), 12 * (1 - x) * (1 - 3 * x), 0.0)


UNIFORM01 = CovariateLaw("uniform01", _unif_pdf, lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                         lambda rng, n: rng.uniform(0.0, 1.0, n))
BETA23 = CovariateLaw("beta23", _beta_pdf, _beta_dpdf, lambda rng, n: rng.beta(2.0, 3.0, n))


@dataclass(frozen=True)
class SimSetting:
    mean_fn: MeanFunction
    covariate_law: CovariateLaw
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    @property
    def name(self) -> str:
        return f"{self.mean_fn.name}/{self.covariate_law.name}"


SETTINGS = {
    "1": (MU1, UNIFORM01),
    "2": (MU1, BETA23),
    "3": (MU2, UNIFORM01),
    "4": (MU2, BETA23),
    "mu3": (MU3, UNIFORM01),
}


def get_setting(key, sigma: float = 1.0, seed: int = 0) -> SimSetting:
    try:
        mean_fn, law = SETTINGS[str(key)]
    except KeyError:
        raise ValueError(f"unknown setting {key!r}; choose from {sorted(SETTINGS)}") from None
    return SimSetting(mean_fn, law, sigma, seed)


@dataclass(frozen=True, eq=False)
class SyntheticData:
    sample: Sample
    truth: np.ndarray


def generate(setting: SimSetting, n: int, seed: int | None = None) -> SyntheticData:
    """Draw ``n`` observations; the truth vector ``mu(X)`` rides along."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(setting.seed if seed is None else seed)
    x = setting.covariate_law.sampler(rng, n)
    truth = setting.mean_fn(x)
    y = truth + setting.sigma * rng.standard_normal(n)
    return SyntheticData(Sample(x, y), truth)


def bias_variance_fns(setting: SimSetting, kernel: KernelSpec):
    """Leading bias ``B(x)`` and variance ``V(x)`` functions of the NW estimator."""
    kappa2 = moment(kernel, 2)
    nu0 = square_moment(kernel, 0)
    mu = setting.mean_fn
    law = setting.covariate_law
    sigma2 = setting.sigma**2

    def _density(x):
        f = law.pdf(x)
        if np.any(f <= 0):
            raise ValueError("covariate density vanishes at an evaluation point")
        return f

    def bias(x):
        x = np.asarray(x, dtype=float)
        f = _density(x)
        return kappa2 / 2 * (mu.second(x) + 2 * mu.first(x) * law.dpdf(x) / f)

    def variance(x):
        x = np.asarray(x, dtype=float)
        return nu0 * sigma2 / _density(x)

    return bias, variance


def amise_constants(setting: SimSetting, kernel: KernelSpec, weight: WeightFn | None = None):
    """``(B_bar, V_bar)``: integrals of ``B^2 w f`` and ``V w f`` over the weight support."""
    weight = WeightFn() if weight is None else weight
    lo, hi = setting.covariate_law.support
    a, b = weight.support
    a, b = max(a, lo), min(b, hi)
    if not b > a:
        raise ValueError("weight function trims the whole support")
    bias, variance = bias_variance_fns(setting, kernel)
    pdf = setting.covariate_law.pdf
    brk = [p for p in (0.5,) if a < p < b]
    b_bar = quad(lambda t: float(bias(t)) ** 2 * float(pdf(t)), a, b, points=brk or None,
                 limit=500, epsabs=0.0, epsrel=1e-11)[0]
    v_bar = quad(lambda t: float(variance(t)) * float(pdf(t)), a, b, limit=500, epsabs=0.0, epsrel=1e-11)[0]
    return b_bar, v_bar


def optimal_bandwidth(setting: SimSetting, kernel: KernelSpec, N: float, weight: WeightFn | None = None) -> float:
    """AMISE-optimal bandwidth; the h^4 bias rate holds for second-order kernels only."""
    if kernel.order != 2:
        raise ValueError(f"oracle bandwidth needs a second-order kernel, got order {kernel.order}")
    b_bar, v_bar = amise_constants(setting, kernel, weight)
    return amise_optimal(b_bar, v_bar, N)


def _paired(pred, ref):
    pred = np.asarray(pred, dtype=float).reshape(-1)
    ref = np.asarray(ref, dtype=float).reshape(-1)
    if pred.shape != ref.shape:
        raise ValueError("predictions and reference differ in length")
    keep = ~np.isnan(pred)
    if not keep.any():
        raise ValueError("no defined predictions to score")
    return pred[keep], ref[keep], int((~keep).sum())


def rmse(predictions, truth, return_excluded: bool = False):
    """Root mean squared error against the true mean; Undefined predictions are excluded."""
    p, t, excluded = _paired(predictions, truth)
    val = float(np.sqrt(np.mean((p - t) ** 2)))
    return (val, excluded) if return_excluded else val


def rmpe(predictions, observed, return_excluded: bool = False):
    """Root mean prediction error against observed responses."""
    return rmse(predictions, observed, return_excluded)


def mrae(h_values, h_ref: float) -> float:
    """Mean relative absolute error of bandwidths against a reference."""
    hs = np.asarray(h_values, dtype=float).reshape(-1)
    if hs.size == 0:
        raise ValueError("no bandwidths")
    return float(np.mean(np.abs(hs - h_ref) / h_ref))
