"""Grid design, grid-point fitting and interpolation-based prediction.

A fitted :class:`GpaModel` holds exact Nadaraya-Watson values at equally
spaced grid points. Predictions interpolate those values (linear, Lagrange of
order ``nu``, or simplex-linear in ``p`` dimensions) and never touch the
training data again.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .kernels import InvalidDimensionError
from .moments import LayoutMismatchError, MomentStats, nw_from_stats

__all__ = [
    "SupportMode",
    "Grid",
    "MultiGrid",
    "GpaModel",
    "OutOfRangeError",
    "ModelFormatError",
    "MODEL_VERSION",
    "design_grid",
    "grid_count",
    "fit_grid",
    "predict_linear",
    "lagrange_coeffs",
    "lagrange_window",
    "predict_poly",
    "find_simplex",
    "predict_multi",
    "select_order",
    "save_model",
    "load_model",
]

MODEL_VERSION = 1


class OutOfRangeError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


class SupportMode(Enum):
    COMPACT = "compact"
    DIVERGING = "diverging"


@dataclass(frozen=True)
class Grid:
    """``J + 1`` equally spaced points ``lo + j * (hi - lo) / J``."""

    lo: float
    hi: float
    J: int
    mode: SupportMode = SupportMode.COMPACT

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.hi > self.lo):
            raise ValueError("grid needs finite bounds with hi > lo")
        if int(self.J) != self.J or self.J < 1:
            raise ValueError(f"grid needs J >= 1 segments, got {self.J}")
        object.__setattr__(self, "J", int(self.J))
        object.__setattr__(self, "mode", SupportMode(self.mode))

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / self.J

    @property
    def points(self) -> np.ndarray:
        return self.lo + np.arange(self.J + 1) * self.spacing

    @property
    def size(self) -> int:
        return self.J + 1

    def position(self, x) -> np.ndarray:
        """Fractional grid coordinate ``(x - lo) / spacing``."""
        return (np.asarray(x, dtype=float) - self.lo) / self.spacing


@dataclass(frozen=True)
class MultiGrid:
    """Lattice of ``(J + 1)**p`` points, the same axis grid on every coordinate.

    Lattice points are ordered row-major by their integer multi-index.
    """

    axis: Grid
    p: int

    def __post_init__(self):
        if self.p < 2:
            raise InvalidDimensionError("a lattice needs p >= 2")

    @property
    def J(self) -> int:
        return self.axis.J

    @property
    def size(self) -> int:
        return (self.axis.J + 1) ** self.p

    @property
    def shape(self) -> tuple:
        return (self.axis.J + 1,) * self.p

    @property
    def points(self) -> np.ndarray:
        idx = np.indices(self.shape).reshape(self.p, -1).T
        return self.axis.lo + idx * self.axis.spacing

    def flat_index(self, multi_index) -> np.ndarray:
        multi_index = np.asarray(multi_index)
        return np.ravel_multi_index(tuple(np.moveaxis(multi_index, -1, 0)), self.shape)


def grid_count(N: float, h: float, length: float = 1.0, multiplier: float = 1.0) -> int:
    """``floor(c * length * log(log N) / h)``, clamped to at least 2."""
    if N < 3:
        raise ValueError("grid design needs N >= 3 so that log log N > 0")
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    if not multiplier > 0:
        raise ValueError("grid multiplier must be positive")
    return max(2, int(math.floor(multiplier * length * math.log(math.log(N)) / h)))


def design_grid(N: float, h: float, support=(0.0, 1.0), multiplier: float = 1.0) -> Grid:
    """Grid for sample size ``N`` and bandwidth ``h``.

    ``support`` is a ``(lo, hi)`` pair or ``"diverging"``. The diverging design
    spans ``[-log N, log N]`` with ``floor(2 log N) * J_base`` segments, where
    ``J_base`` is the unit-interval count.
    """
    if isinstance(support, (str, SupportMode)) and SupportMode(support) is SupportMode.DIVERGING:
        base = grid_count(N, h, 1.0, multiplier)
        half = math.log(N)
        return Grid(-half, half, int(math.floor(2 * half)) * base, SupportMode.DIVERGING)
    lo, hi = (float(v) for v in support)
    if not hi > lo:
        raise ValueError("support needs hi > lo")
    return Grid(lo, hi, grid_count(N, h, hi - lo, multiplier), SupportMode.COMPACT)


@dataclass(frozen=True, eq=False)
class GpaModel:
    """Fitted grid values plus everything needed to predict from them.

    ``values`` is indexed like ``grid.points``; NaN marks an Undefined grid value.
    """

    grid: Grid | MultiGrid
    values: np.ndarray
    h: float
    kernel_id: str
    nu: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.shape[0] != self.grid.size:
            raise LayoutMismatchError(f"{vals.shape[0]} values for a grid of {self.grid.size} points")
        if self.nu < 1:
            raise ValueError("interpolation order must be >= 1")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def p(self) -> int:
        return self.grid.p if isinstance(self.grid, MultiGrid) else 1

    @property
    def axis(self) -> Grid:
        return self.grid.axis if isinstance(self.grid, MultiGrid) else self.grid

    @property
    def undefined_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    def with_order(self, nu: int) -> "GpaModel":
        return GpaModel(self.grid, self.values, self.h, self.kernel_id, nu, dict(self.meta))

    def predict(self, x, nu: int | None = None):
        """Dispatch to the univariate or simplex interpolator."""
        if self.p > 1:
            return predict_multi(self, x)
        order = self.nu if nu is None else nu
        return predict_linear(self, x) if order == 1 else predict_poly(self, x, order)

    def to_dict(self) -> dict:
        axis = self.axis
        mask = self.undefined_mask
        return {
            "version": MODEL_VERSION,
            "p": self.p,
            "support_mode": axis.mode.value,
            "lo": axis.lo,
            "hi": axis.hi,
            "J": axis.J,
            "h": self.h,
            "kernel_id": self.kernel_id,
            "nu": self.nu,
            "values": [None if m else float(v) for v, m in zip(self.values, mask)],
            "undefined_mask": [bool(m) for m in mask],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GpaModel":
        version = doc.get("version")
        if not isinstance(version, int):
            raise ModelFormatError("model document has no integer version")
        if version > MODEL_VERSION:
            raise ModelFormatError(f"model version {version} is newer than supported {MODEL_VERSION}")
        try:
            axis = Grid(float(doc["lo"]), float(doc["hi"]), int(doc["J"]), SupportMode(doc["support_mode"]))
            p = int(doc["p"])
            grid = axis if p == 1 else MultiGrid(axis, p)
            mask = np.asarray(doc["undefined_mask"], dtype=bool)
            values = np.array([np.nan if v is None else float(v) for v in doc["values"]])
            if mask.shape != values.shape or np.any(mask != np.isnan(values)):
                raise ModelFormatError("undefined_mask disagrees with values")
            return cls(grid, values, float(doc["h"]), str(doc["kernel_id"]), int(doc["nu"]), dict(doc.get("meta", {})))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ModelFormatError):
                raise
            raise ModelFormatError(f"malformed model document: {exc}") from exc


def save_model(model: GpaModel, path) -> None:
    # json writes floats with the shortest repr that round-trips exactly
    Path(path).write_text(json.dumps(model.to_dict(), indent=1, allow_nan=False))


def load_model(path) -> GpaModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a model document") from exc
    return GpaModel.from_dict(doc)


def fit_grid(stats: MomentStats, grid: Grid | MultiGrid, h: float, kernel, nu: int = 1,
             meta: dict | None = None) -> GpaModel:
    """Turn assembled grid-point statistics into a :class:`GpaModel`."""
    pts = grid.points
    if len(stats) != grid.size or stats.points.size != pts.size:
        raise LayoutMismatchError("statistics do not match the grid layout")
    axis = grid.axis if isinstance(grid, MultiGrid) else grid
    scale = max(1.0, abs(axis.lo), abs(axis.hi))
    if not np.allclose(stats.points.reshape(pts.shape), pts, rtol=0, atol=1e-12 * scale):
        raise LayoutMismatchError("statistics were computed at different points")
    values = nw_from_stats(stats)
    info = {"N": int(stats.n), "undefined": int(np.isnan(values).sum())}
    info.update(meta or {})
    kernel_id = kernel if isinstance(kernel, str) else kernel.name
    return GpaModel(grid, values, float(h), kernel_id, nu, info)


def _prepare_univariate(model: GpaModel, x):
    if model.p != 1:
        raise InvalidDimensionError("model is multivariate")
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    flat = arr.reshape(-1)
    g = model.grid
    outside = (flat < g.lo) | (flat > g.hi)
    if g.mode is SupportMode.COMPACT:
        flat = np.clip(flat, g.lo, g.hi)
    return arr, flat, outside


def _finish(arr, out, outside, return_flags):
    result = float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)
    if return_flags:
        return result, (bool(outside[0]) if arr.ndim == 0 else outside.reshape(arr.shape))
    return result


def predict_linear(model: GpaModel, x, return_flags: bool = False):
    """Linear interpolation between the two grid values bracketing ``x``.

    Compact grids clamp out-of-range queries to the boundary value; diverging
    grids return 0 there. ``return_flags`` adds the out-of-range mask.
    """
    arr, flat, outside = _prepare_univariate(model, x)
    g = model.grid
    j = np.clip(np.floor(g.position(flat)).astype(np.int64), 0, g.J - 1)
    left = g.lo + j * g.spacing
    right = g.lo + (j + 1) * g.spacing
    w_left = (right - flat) / g.spacing
    w_right = (flat - left) / g.spacing
    out = w_left * model.values[j] + w_right * model.values[j + 1]
    # queries that land exactly on a node return its value verbatim
    node = np.clip(np.rint(g.position(flat)).astype(np.int64), 0, g.J)
    on_node = flat == g.lo + node * g.spacing
    out = np.where(on_node, model.values[node], out)
    if g.mode is SupportMode.DIVERGING:
        out = np.where(outside, 0.0, out)
    return _finish(arr, out, outside, return_flags)


def lagrange_coeffs(x, window_points) -> np.ndarray:
    """Lagrange basis weights ``q_k(x)`` for nodes ``window_points``.

    ``window_points`` has shape (nu+1,) or (Q, nu+1) for per-query windows;
    ``x`` is a scalar or shape (Q,). Returns shape (..., nu+1).
    """
    nodes = np.asarray(window_points, dtype=float)
    xs = np.asarray(x, dtype=float)
    if nodes.shape[-1] < 1:
        raise ValueError("need at least one node")
    srt = np.sort(nodes, axis=-1)
    if np.any(np.diff(srt, axis=-1) == 0):
        raise ValueError("interpolation nodes must be distinct")
    m = nodes.shape[-1]
    weights = np.ones(np.broadcast_shapes(xs.shape + (m,), nodes.shape))
    xe = xs[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(m):
            xi = nodes[..., i:i + 1]
            factor = (xe - xi) / (nodes - xi)
            factor[..., i] = 1.0
            weights = weights * factor
    return weights


def lagrange_window(grid: Grid, x, nu: int) -> np.ndarray:
    """Start index of the ``nu + 1`` grid points nearest each ``x``.

    Equidistant ties go to the lower index; windows are shifted inward at the
    grid ends.
    """
    if grid.J < nu:
        raise ValueError(f"order {nu} needs at least {nu + 1} grid points")
    s = grid.position(x)
    start = np.ceil(s - nu / 2.0 - 0.5).astype(np.int64)
    return np.clip(start, 0, grid.J - nu)


def predict_poly(model: GpaModel, x, nu: int | None = None, return_flags: bool = False):
    """Order-``nu`` Lagrange interpolation over the ``nu + 1`` nearest grid values."""
    nu = model.nu if nu is None else int(nu)
    if nu < 1:
        raise ValueError("interpolation order must be >= 1")
    arr, flat, outside = _prepare_univariate(model, x)
    g = model.grid
    start = lagrange_window(g, flat, nu)
    idx = start[:, None] + np.arange(nu + 1)
    nodes = g.lo + idx * g.spacing
    weights = lagrange_coeffs(flat, nodes)
    out = np.sum(weights * model.values[idx], axis=1)
    if g.mode is SupportMode.DIVERGING:
        out = np.where(outside, 0.0, out)
    return _finish(arr, out, outside, return_flags)


def find_simplex(mgrid: MultiGrid, x):
    """Containing Kuhn simplex of each query and its barycentric weights.

    Returns ``(vertices, weights)``: integer multi-indices of shape
    (..., p+1, p) and weights of shape (..., p+1).
    """
    pts = np.asarray(x, dtype=float)
    p = mgrid.p
    if pts.shape[-1] != p:
        raise InvalidDimensionError(f"query points must have {p} coordinates")
    axis = mgrid.axis
    tol = 1e-12 * (axis.hi - axis.lo)
    if np.any(pts < axis.lo - tol) or np.any(pts > axis.hi + tol):
        raise OutOfRangeError("query outside the lattice bounding box")
    s = np.clip(axis.position(pts), 0.0, axis.J)
    base = np.clip(np.floor(s).astype(np.int64), 0, axis.J - 1)
    frac = s - base
    # staircase: step along axes in order of decreasing fractional part
    order = np.argsort(-frac, axis=-1, kind="stable")
    steps = np.zeros(pts.shape[:-1] + (p + 1, p), dtype=np.int64)
    eye = np.eye(p, dtype=np.int64)
    for k in range(1, p + 1):
        steps[..., k, :] = steps[..., k - 1, :] + eye[order[..., k - 1]]
    vertices = base[..., None, :] + steps
    sorted_frac = np.take_along_axis(frac, order, axis=-1)
    padded = np.concatenate(
        [np.ones(sorted_frac.shape[:-1] + (1,)), sorted_frac, np.zeros(sorted_frac.shape[:-1] + (1,))], axis=-1
    )
    weights = padded[..., :-1] - padded[..., 1:]
    return vertices, weights


def predict_multi(model: GpaModel, x):
    """Simplex-linear interpolation of lattice values at p-vectors ``x``."""
    if model.p < 2:
        raise InvalidDimensionError("model is univariate")
    pts = np.asarray(x, dtype=float)
    vertices, weights = find_simplex(model.grid, pts)
    flat = model.grid.flat_index(vertices)
    out = np.sum(weights * model.values[flat], axis=-1)
    return float(out) if pts.ndim == 1 else out


def select_order(models, validation):
    """Pick the interpolation order with the smallest validation RMPE.

    ``models`` maps ``nu`` to a fitted model (or is a sequence indexed from
    ``nu = 1``). Returns ``(nu, table)`` where ``table[nu] = (rmpe, n_undefined)``;
    orders whose predictions are all Undefined get ``rmpe = nan``.
    """
    if not isinstance(models, dict):
        models = {i + 1: m for i, m in enumerate(models)}
    if not models:
        raise ValueError("no candidate models")
    if validation.n < 1:
        raise ValueError("empty validation sample")
    table = {}
    for nu in sorted(models):
        pred = np.asarray(models[nu].predict(validation.x[:, 0], nu), dtype=float)
        ok = ~np.isnan(pred)
        if not ok.any():
            table[nu] = (float("nan"), int(pred.size))
            continue
        err = float(np.sqrt(np.mean((pred[ok] - validation.y[ok]) ** 2)))
        table[nu] = (err, int((~ok).sum()))
    usable = [nu for nu in sorted(table) if not math.isnan(table[nu][0])]
    if not usable:
        raise ValueError("every candidate order produced only Undefined predictions")
    best = min(usable, key=lambda nu: (table[nu][0], nu))
    return best, table
