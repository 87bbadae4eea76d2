"""Boundary-corrected kernel density estimation and the log quantile density
(LQD) representation of densities on [0, 1].

All curves live on a shared uniform :class:`Grid`.  Densities are mapped to
LQD curves ``f(u) = -log z(Q(u))``, which form an unconstrained linear space,
and mapped back with :func:`lqd_inverse`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import (
    DegenerateDensityError,
    DomainError,
    EmptyInputError,
    InvalidBandwidthError,
    UnstableCurveError,
)

__all__ = [
    "DENSITY_FLOOR",
    "Grid",
    "RawSample",
    "DensityCurve",
    "QuantileCurve",
    "LqdCurve",
    "kernel",
    "kernel_cdf",
    "default_kde_bandwidth",
    "estimate_density",
    "density_to_quantile",
    "lqd_transform",
    "lqd_inverse",
    "quantile_from_lqd",
]

DENSITY_FLOOR = 1e-4

# Largest LQD value accepted by lqd_inverse before exp() is deemed unstable.
_MAX_ABS_LQD = 50.0


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``count`` points on [0, 1]."""

    count: int = 101

    def __post_init__(self):
        if self.count < 10:
            raise ValueError(f"grid needs at least 10 points, got {self.count}")

    @property
    def points(self) -> NDArray[np.float64]:
        return np.linspace(0.0, 1.0, self.count)

    @property
    def spacing(self) -> float:
        return 1.0 / (self.count - 1)

    def trapezoid_weights(self) -> NDArray[np.float64]:
        w = np.full(self.count, self.spacing)
        w[[0, -1]] *= 0.5
        return w


def _trapz(values: NDArray, grid: Grid, axis: int = -1) -> NDArray:
    return np.trapezoid(values, dx=grid.spacing, axis=axis)


def _cumtrapz(values: NDArray, grid: Grid) -> NDArray:
    """Cumulative trapezoid along the last axis, starting at 0."""
    inc = 0.5 * grid.spacing * (values[..., 1:] + values[..., :-1])
    out = np.zeros(values.shape)
    np.cumsum(inc, axis=-1, out=out[..., 1:])
    return out


def _as_curve_values(values: ArrayLike, grid: Grid) -> NDArray[np.float64]:
    arr = np.asarray(values, dtype=float)
    if arr.shape != (grid.count,):
        raise ValueError(f"expected {grid.count} values, got shape {arr.shape}")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RawSample:
    """Observations of one subject, already rescaled to [0, 1]."""

    subject_id: int
    values: NDArray[np.float64]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        if vals.size == 0:
            raise EmptyInputError(f"subject {self.subject_id} has no observations")
        if np.any(vals < 0.0) or np.any(vals > 1.0) or not np.all(np.isfinite(vals)):
            raise DomainError(f"subject {self.subject_id} has values outside [0, 1]")
        object.__setattr__(self, "values", vals)

    @property
    def size(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class DensityCurve:
    """Nonnegative density on the grid, renormalized to unit trapezoid mass."""

    grid: Grid
    values: NDArray[np.float64] = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.count,) or not np.all(np.isfinite(vals)):
            raise ValueError("density values must be finite and match the grid")
        if np.any(vals < 0):
            raise ValueError("density values must be nonnegative")
        mass = _trapz(vals, self.grid)
        if mass <= 0:
            raise DegenerateDensityError("density has zero mass")
        object.__setattr__(self, "values", _as_curve_values(vals / mass, self.grid))

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        return np.interp(x, self.grid.points, self.values)


@dataclass(frozen=True)
class QuantileCurve:
    """Quantile function ``Q(u)`` sampled on the probability grid."""

    grid: Grid
    values: NDArray[np.float64] = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _as_curve_values(self.values, self.grid))
        if np.any(np.diff(self.values) < 0):
            raise ValueError("quantile values must be nondecreasing")


@dataclass(frozen=True)
class LqdCurve:
    """Log quantile density ``f(u) = log q(u)`` on the probability grid."""

    grid: Grid
    values: NDArray[np.float64] = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _as_curve_values(self.values, self.grid))
        if not np.all(np.isfinite(self.values)):
            raise ValueError("LQD values must be finite")


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------

def kernel(v: ArrayLike, name: str = "epanechnikov") -> NDArray[np.float64]:
    """Evaluate a symmetric kernel supported on [-1, 1]."""
    v = np.asarray(v, dtype=float)
    inside = np.abs(v) <= 1.0
    if name == "epanechnikov":
        return np.where(inside, 0.75 * (1.0 - v * v), 0.0)
    if name == "uniform":
        return np.where(inside, 0.5, 0.0)
    raise ValueError(f"unknown kernel {name!r}")


def kernel_cdf(v: ArrayLike, name: str = "epanechnikov") -> NDArray[np.float64]:
    """``int_{-1}^{v} K(s) ds``."""
    v = np.clip(np.asarray(v, dtype=float), -1.0, 1.0)
    if name == "epanechnikov":
        return 0.75 * (v - v**3 / 3.0) + 0.5
    if name == "uniform":
        return 0.5 * (v + 1.0)
    raise ValueError(f"unknown kernel {name!r}")


def default_kde_bandwidth(values: ArrayLike) -> float:
    """``sd * T**(-1/5)``, capped below 1/2."""
    values = np.asarray(values, dtype=float)
    sd = values.std(ddof=1) if values.size > 1 else 0.0
    if not sd > 0:
        sd = 1.0 / np.sqrt(12.0)
    return float(min(sd * values.size ** (-0.2), 0.49))


def boundary_weight(u: ArrayLike, h: float, kernel_name: str = "epanechnikov") -> NDArray:
    """Reciprocal of the kernel mass falling inside [0, 1] near each edge."""
    u = np.asarray(u, dtype=float)
    w = np.ones_like(u)
    left = u < h
    right = u > 1.0 - h
    w[left] = 1.0 / kernel_cdf(u[left] / h, kernel_name)
    # symmetric right-edge form; see notes on the printed estimator
    w[right] = 1.0 / kernel_cdf((1.0 - u[right]) / h, kernel_name)
    return w


def estimate_density(
    sample: RawSample | ArrayLike,
    h: float | None = None,
    kernel_name: str = "epanechnikov",
    grid: Grid | None = None,
) -> DensityCurve:
    """Boundary-corrected kernel density estimate on ``grid``.

    Parameters
    ----------
    sample : RawSample or array_like
        Observations in [0, 1].
    h : float, optional
        Bandwidth in (0, 1/2).  Defaults to :func:`default_kde_bandwidth`.
    kernel_name : {"epanechnikov", "uniform"}
    grid : Grid, optional
        Evaluation grid (101 points by default).

    Returns
    -------
    DensityCurve
        The kernel sum multiplied by the edge weight, renormalized to
        integrate to one.
    """
    if not isinstance(sample, RawSample):
        sample = RawSample(-1, np.asarray(sample, dtype=float))
    grid = grid or Grid()
    if h is None:
        h = default_kde_bandwidth(sample.values)
    if not 0.0 < h < 0.5:
        raise InvalidBandwidthError(f"bandwidth must lie in (0, 1/2), got {h}")
    u = grid.points
    k = kernel((u[:, None] - sample.values[None, :]) / h, kernel_name).sum(axis=1)
    vals = k * boundary_weight(u, h, kernel_name) / (sample.size * h)
    return DensityCurve(grid, vals)


# --------------------------------------------------------------------------
# density <-> quantile <-> LQD
# --------------------------------------------------------------------------

def _invert_piecewise_linear_density(
    node_vals: NDArray, cum: NDArray, levels: NDArray, spacing: float
) -> NDArray:
    """Invert ``x -> int_0^x g`` for ``g`` piecewise linear between nodes.

    ``cum`` holds the integral at the nodes.  Within a cell the integral is
    quadratic and is inverted in closed form; flat stretches resolve to
    their left-most point.
    """
    j = np.searchsorted(cum, levels, side="left") - 1
    j = np.clip(j, 0, len(cum) - 2)
    r = np.maximum(levels - cum[j], 0.0)
    b = node_vals[j]
    slope = (node_vals[j + 1] - b) / spacing
    disc = np.sqrt(np.maximum(b * b + 2.0 * slope * r, 0.0))
    denom = b + disc
    s = np.divide(2.0 * r, denom, out=np.zeros_like(r), where=denom > 0)
    return j * spacing + np.clip(s, 0.0, spacing)


def density_to_quantile(z: DensityCurve) -> QuantileCurve:
    """Quantile function of ``z`` on the same grid.

    ``z`` is treated as piecewise linear, so its CDF is piecewise quadratic
    and agrees with the cumulative trapezoid at the nodes.
    """
    grid = z.grid
    cdf = _cumtrapz(z.values, grid)
    scale = cdf[-1]
    q = _invert_piecewise_linear_density(z.values / scale, cdf / scale,
                                         grid.points, grid.spacing)
    q[0], q[-1] = 0.0, 1.0
    return QuantileCurve(grid, np.maximum.accumulate(q))


def lqd_transform(
    z: DensityCurve, floor: float = DENSITY_FLOOR, strict: bool = False
) -> LqdCurve:
    """Log quantile density ``f(u) = -log z(Q(u))``.

    Density values below ``floor`` are clamped to it.  With ``strict=True``
    they raise :class:`DegenerateDensityError` instead.
    """
    q = density_to_quantile(z)
    zq = z(q.values)
    if strict and np.any(zq < floor):
        raise DegenerateDensityError(
            f"density drops to {zq.min():.3g} below the floor {floor:g}"
        )
    return LqdCurve(z.grid, -np.log(np.maximum(zq, floor)))


def _lqd_cumulative(fvals: NDArray, spacing: float) -> tuple[NDArray, NDArray]:
    """Node integrals of ``exp f`` with ``f`` linear between nodes.

    Returns the per-cell slopes of ``f`` and the cumulative integral at the
    nodes (exact for the log-linear interpolant).
    """
    slope = np.diff(fvals) / spacing
    small = np.abs(slope * spacing) < 1e-10
    safe = np.where(small, 1.0, slope)
    cell = np.where(small, spacing * np.exp(fvals[:-1]),
                    np.exp(fvals[:-1]) * np.expm1(slope * spacing) / safe)
    cum = np.concatenate([[0.0], np.cumsum(cell)])
    return slope, cum


def _lqd_partial(fvals: NDArray, slope: NDArray, cum: NDArray, u: NDArray,
                 spacing: float) -> NDArray:
    """``int_0^u exp f`` for the log-linear interpolant."""
    j = np.clip(np.floor(u / spacing).astype(int), 0, len(fvals) - 2)
    s = np.clip(u - j * spacing, 0.0, spacing)
    b = slope[j]
    small = np.abs(b * s) < 1e-10
    safe = np.where(small, 1.0, b)
    part = np.where(small, s, np.expm1(b * s) / safe) * np.exp(fvals[j])
    return cum[j] + part


def lqd_inverse(f: LqdCurve) -> DensityCurve:
    """Density whose LQD curve is ``f``.

    ``f`` is interpolated linearly between grid nodes, which makes the
    quantile function and its inverse available in closed form.
    """
    grid = f.grid
    fv = f.values
    if np.max(np.abs(fv)) > _MAX_ABS_LQD:
        raise UnstableCurveError(f"LQD curve magnitude {np.max(np.abs(fv)):.3g} too large")
    with np.errstate(over="raise"):
        try:
            slope, cum = _lqd_cumulative(fv, grid.spacing)
        except FloatingPointError as err:
            raise UnstableCurveError("overflow exponentiating LQD curve") from err
    theta = cum[-1]
    if not np.isfinite(theta):
        raise UnstableCurveError("LQD curve integrates to infinity")
    # F(x) = Q^{-1}(x): locate the cell, then invert exp-linear integral
    levels = grid.points * theta
    j = np.clip(np.searchsorted(cum, levels, side="left") - 1, 0, grid.count - 2)
    r = np.maximum(levels - cum[j], 0.0)
    b = slope[j]
    scaled = r * np.exp(-fv[j])
    small = np.abs(b * scaled) < 1e-10
    safe = np.where(small, 1.0, b)
    s = np.where(small, scaled, np.log1p(np.maximum(b * scaled, -1.0 + 1e-300)) / safe)
    cdf = j * grid.spacing + np.clip(s, 0.0, grid.spacing)
    z = theta * np.exp(-np.interp(cdf, grid.points, fv))
    return DensityCurve(grid, z)


def quantile_from_lqd(f: LqdCurve, u: ArrayLike) -> NDArray[np.float64] | float:
    """``Q(u) = int_0^u exp f / int_0^1 exp f``, with ``f`` log-linear
    between grid nodes (the same convention as :func:`lqd_inverse`)."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr < 0) or np.any(u_arr > 1) or not np.all(np.isfinite(u_arr)):
        raise DomainError("probability levels must lie in [0, 1]")
    grid = f.grid
    slope, cum = _lqd_cumulative(f.values, grid.spacing)
    val = _lqd_partial(f.values, slope, cum, u_arr, grid.spacing) / cum[-1]
    val = np.clip(val, 0.0, 1.0)
    if np.ndim(u) == 0:
        return float(val)
    return val
