"""Compact-support polynomial kernels and their moment integrals.

Every kernel here is a symmetric polynomial on ``[-1, 1]`` and zero outside.
It is stored by its coefficients in powers of ``u**2``, so
``K(u) = c[0] + c[1] u**2 + c[2] u**4 + ...`` for ``|u| <= 1``. Evaluation uses
Horner's rule in ``u**2`` on both the numpy and the compiled paths, which
keeps the two paths rounding the same way.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.integrate import simpson

__all__ = [
    "KernelFamily",
    "KernelSpec",
    "InvalidBandwidthError",
    "InvalidDimensionError",
    "KernelValidationError",
    "epanechnikov",
    "fourth_order",
    "polynomial",
    "kernel_from_name",
    "default_kernel_for_order",
    "evaluate",
    "scaled_eval",
    "product_eval",
    "moment",
    "square_moment",
    "moment_closed_form",
    "square_moment_closed_form",
]

QUAD_PANELS = 2048
MOMENT_TOL = 1e-10
ORDER_TOL = 1e-6


class InvalidBandwidthError(ValueError):
    pass


class InvalidDimensionError(ValueError):
    pass


class KernelValidationError(ValueError):
    pass


class KernelFamily(Enum):
    EPANECHNIKOV = "epanechnikov"
    FOURTH_ORDER = "fourth-order"
    CUSTOM_POLYNOMIAL = "poly"


@dataclass(frozen=True)
class KernelSpec:
    """A validated symmetric polynomial kernel supported on ``[-1, 1]``.

    Parameters
    ----------
    family : KernelFamily
    even_coefficients : tuple of float
        Coefficients of ``K`` in ascending powers of ``u**2``.
    order : int
        Kernel order ``q``: moments ``1..q-1`` vanish and moment ``q`` does not.
    """

    family: KernelFamily
    even_coefficients: tuple
    order: int

    def __post_init__(self):
        coefs = tuple(float(c) for c in self.even_coefficients)
        object.__setattr__(self, "even_coefficients", coefs)
        if not coefs or not all(math.isfinite(c) for c in coefs):
            raise KernelValidationError("kernel needs finite coefficients")
        if self.order < 2:
            raise KernelValidationError(f"kernel order must be >= 2, got {self.order}")
        _validate(self)

    @property
    def coefficients(self) -> np.ndarray:
        return np.asarray(self.even_coefficients, dtype=float)

    @property
    def name(self) -> str:
        if self.family is KernelFamily.CUSTOM_POLYNOMIAL:
            return "poly:" + json.dumps(list(self.power_coefficients()))
        return self.family.value

    @property
    def value_at_zero(self) -> float:
        return self.even_coefficients[0]

    @property
    def nonnegative(self) -> bool:
        u = np.linspace(0.0, 1.0, 2001)
        return bool(np.all(self(u) >= -1e-15))

    def power_coefficients(self) -> tuple:
        """Coefficients in ascending powers of ``u`` (odd entries zero)."""
        out = []
        for c in self.even_coefficients:
            out.extend([c, 0.0])
        return tuple(out[:-1])

    def __call__(self, u):
        return evaluate(self, u)


def _horner_even(coefs, u):
    t = u * u
    acc = np.full_like(t, coefs[-1])
    for c in coefs[-2::-1]:
        acc = acc * t + c
    return acc


def evaluate(kernel: KernelSpec, u):
    """K(u), zero for ``|u| > 1``. Accepts scalars or arrays."""
    arr = np.asarray(u, dtype=float)
    vals = np.where(np.abs(arr) <= 1.0, _horner_even(kernel.even_coefficients, arr), 0.0)
    return float(vals) if vals.ndim == 0 else vals


def _check_h(h):
    if not (h > 0 and math.isfinite(h)):
        raise InvalidBandwidthError(f"bandwidth must be positive and finite, got {h!r}")


def scaled_eval(kernel: KernelSpec, h: float, d):
    """``K_h(d) = K(d / h) / h``."""
    _check_h(h)
    vals = evaluate(kernel, np.asarray(d, dtype=float) / h) / h
    return vals


def product_eval(kernel: KernelSpec, h: float, d):
    """Product kernel ``h**-p * prod_s K(d_s / h)`` over the last axis of ``d``."""
    _check_h(h)
    arr = np.asarray(d, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] == 0:
        raise InvalidDimensionError("product kernel needs a nonempty vector")
    p = arr.shape[-1]
    vals = np.prod(evaluate(kernel, arr / h), axis=-1) / h**p
    return float(vals) if np.ndim(vals) == 0 else vals


def _simpson(fn) -> float:
    u = np.linspace(-1.0, 1.0, 2 * QUAD_PANELS + 1)
    return float(simpson(fn(u), x=u))


def moment(kernel: KernelSpec, r: int) -> float:
    """kappa_r = int u^r K(u) du, by composite Simpson on [-1, 1]."""
    return _simpson(lambda u: u**r * evaluate(kernel, u))


def square_moment(kernel: KernelSpec, r: int) -> float:
    """nu_r = int u^r K(u)^2 du, by composite Simpson on [-1, 1]."""
    return _simpson(lambda u: u**r * evaluate(kernel, u) ** 2)


def _poly_moment(power_coefs, r):
    total = 0.0
    for k, c in enumerate(power_coefs):
        if c != 0.0 and (r + k) % 2 == 0:
            total += c * 2.0 / (r + k + 1)
    return total


def moment_closed_form(kernel: KernelSpec, r: int) -> float:
    return _poly_moment(kernel.power_coefficients(), r)


def square_moment_closed_form(kernel: KernelSpec, r: int) -> float:
    sq = np.polynomial.polynomial.polymul(kernel.power_coefficients(), kernel.power_coefficients())
    return _poly_moment(tuple(sq), r)


def _validate(kernel: KernelSpec) -> None:
    k0 = moment(kernel, 0)
    if abs(k0 - 1.0) > MOMENT_TOL:
        raise KernelValidationError(f"kernel integrates to {k0!r}, not 1")
    q = kernel.order
    for r in range(1, q):
        if abs(moment(kernel, r)) > MOMENT_TOL:
            raise KernelValidationError(f"moment {r} does not vanish for declared order {q}")
    if abs(moment(kernel, q)) <= ORDER_TOL:
        raise KernelValidationError(f"moment {q} vanishes; kernel order exceeds {q}")


def epanechnikov() -> KernelSpec:
    """``K(u) = 3/4 (1 - u^2)`` on [-1, 1]."""
    return KernelSpec(KernelFamily.EPANECHNIKOV, (0.75, -0.75), 2)


def fourth_order() -> KernelSpec:
    """``K(u) = 45/32 (1 - 7u^2/3)(1 - u^2)`` on [-1, 1]."""
    c = 45.0 / 32.0
    return KernelSpec(KernelFamily.FOURTH_ORDER, (c, -c * 10.0 / 3.0, c * 7.0 / 3.0), 4)


def polynomial(power_coefficients, order: int | None = None) -> KernelSpec:
    """Custom kernel from coefficients in ascending powers of ``u``.

    Odd coefficients must be zero. When ``order`` is omitted it is inferred
    as the first nonvanishing moment.
    """
    coefs = [float(c) for c in power_coefficients]
    if any(c != 0.0 for c in coefs[1::2]):
        raise KernelValidationError("odd-power coefficients break symmetry")
    even = tuple(coefs[0::2]) or (0.0,)
    if order is None:
        order = _infer_order(even)
    return KernelSpec(KernelFamily.CUSTOM_POLYNOMIAL, even, order)


def _infer_order(even):
    power = []
    for c in even:
        power.extend([c, 0.0])
    for r in range(1, 2 * len(even) + 3):
        if abs(_poly_moment(power, r)) > ORDER_TOL:
            return max(r, 2)
    raise KernelValidationError("could not infer kernel order")


def default_kernel_for_order(nu: int) -> KernelSpec:
    """Built-in kernel of order at least ``nu + 1`` for order-``nu`` interpolation.

    Symmetric kernels have even order, so ``nu = 2`` also maps to the
    fourth-order kernel. Orders above 3 need a custom polynomial kernel.
    """
    if nu == 1:
        return epanechnikov()
    if nu in (2, 3):
        return fourth_order()
    raise KernelValidationError(f"no built-in kernel of order >= {nu + 1}; pass a poly: kernel")


def kernel_from_name(name: str) -> KernelSpec:
    """Parse ``epanechnikov``, ``fourth-order`` or ``poly:[c0,c1,...]``."""
    key = name.strip()
    if key == "epanechnikov":
        return epanechnikov()
    if key in ("fourth-order", "fourth_order"):
        return fourth_order()
    if key.startswith("poly:"):
        try:
            coefs = json.loads(key[len("poly:"):])
        except json.JSONDecodeError as exc:
            raise KernelValidationError(f"bad polynomial kernel spec {name!r}") from exc
        return polynomial(coefs)
    raise KernelValidationError(f"unknown kernel {name!r}")
