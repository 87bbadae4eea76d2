"""B-spline initial estimation of subject curves and additive surfaces.

The model fitted on the LQD scale is

    f_i(u) = g_{i,0}(u) + sum_l g_l(u, X_{i,l}) + noise,

with ``g_{i,0}`` expanded in a scaled u-basis and each ``g_l`` in the tensor
product of the u-basis with an empirically centered, standardized covariate
basis.

Because every subject owns a free curve, the additive columns of the tensor
design lie inside the span of the subject columns.  The least-squares problem
therefore has a null space of dimension ``N0 * sum_l N_l`` and the estimate is
its minimum-norm solution.  The design is a Kronecker product
``A (x) B`` (subject/covariate loadings times u-basis), so the minimum-norm
solution is ``(A^+ (x) B^+) vec(F)``; :func:`tensor_design` builds the dense
matrix for checking.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.interpolate import BSpline

from .density import Grid, LqdCurve
from .exceptions import (
    DegenerateKnotsError,
    DomainError,
    GridMismatchError,
    RankDeficiencyWarning,
)

__all__ = [
    "BSplineBasis",
    "CovariateBasis",
    "InitialFit",
    "build_basis",
    "evaluate_basis",
    "default_knot_counts",
    "tensor_design",
    "fit_initial",
    "eval_subject_curve",
    "eval_additive",
]


@dataclass(frozen=True)
class BSplineBasis:
    """Clamped B-spline basis of a given order on [0, 1]."""

    order: int
    interior_knots: tuple[float, ...]

    def __post_init__(self):
        if self.order < 2:
            raise ValueError("spline order must be at least 2")
        knots = np.asarray(self.interior_knots, dtype=float)
        if knots.size and (np.any(knots <= 0) or np.any(knots >= 1)):
            raise DegenerateKnotsError("interior knots must lie strictly inside (0, 1)")
        if np.any(np.diff(knots) <= 0):
            raise DegenerateKnotsError("interior knots must be strictly increasing")

    @property
    def dimension(self) -> int:
        return len(self.interior_knots) + self.order

    @property
    def knots(self) -> NDArray[np.float64]:
        k = self.order
        return np.r_[np.zeros(k), self.interior_knots, np.ones(k)]

    def _spline(self) -> BSpline:
        return BSpline(self.knots, np.eye(self.dimension), self.order - 1, extrapolate=False)

    def __call__(self, x: ArrayLike, deriv: int = 0) -> NDArray[np.float64]:
        """Basis matrix of shape ``(len(x), dimension)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(x < 0) or np.any(x > 1):
            raise DomainError("basis evaluated outside [0, 1]")
        spl = self._spline()
        if deriv:
            spl = spl.derivative(deriv)
        out = spl(x)
        return np.nan_to_num(out, nan=0.0)


def build_basis(
    order: int = 4,
    interior_knot_count: int = 0,
    placement: str = "equispaced",
    data: ArrayLike | None = None,
) -> BSplineBasis:
    """Construct a basis with ``interior_knot_count + order`` functions.

    ``placement="quantile"`` puts the knots at empirical quantiles of
    ``data``; ties among them raise :class:`DegenerateKnotsError`.
    """
    if interior_knot_count < 0:
        raise ValueError("knot count must be nonnegative")
    probs = np.arange(1, interior_knot_count + 1) / (interior_knot_count + 1)
    if placement == "equispaced":
        knots = probs
    elif placement == "quantile":
        if data is None:
            raise ValueError("quantile placement requires data")
        knots = np.quantile(np.asarray(data, dtype=float), probs)
        if np.any(np.diff(knots) <= 0) or np.any(knots <= 0) or np.any(knots >= 1):
            raise DegenerateKnotsError(f"quantile knots collapse: {knots}")
    else:
        raise ValueError(f"unknown placement {placement!r}")
    return BSplineBasis(order, tuple(float(k) for k in knots))


def evaluate_basis(basis: BSplineBasis, x: float, deriv: int = 0) -> NDArray[np.float64]:
    """Vector of basis values (or derivatives) at a single point."""
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x={x} outside [0, 1]")
    return basis(np.array([x]), deriv)[0]


def default_knot_counts(n_obs: int) -> tuple[int, int]:
    """Interior knot counts for the u- and covariate bases, growing like
    ``T**(1/5)`` and ``T**(1/6)``."""
    return int(round(n_obs ** 0.2)), int(round(n_obs ** (1.0 / 6.0)))


@dataclass(frozen=True)
class CovariateBasis:
    """Covariate B-splines centered and scaled over the training subjects.

    The first centered function is dropped: the centered functions sum to
    zero, so keeping all of them adds nothing but another null direction.
    """

    basis: BSplineBasis
    means: NDArray[np.float64] = field(repr=False)
    scales: NDArray[np.float64] = field(repr=False)

    @classmethod
    def from_data(cls, basis: BSplineBasis, x: NDArray) -> "CovariateBasis":
        raw = basis(x)
        means = raw.mean(axis=0)
        scales = np.sqrt(((raw - means) ** 2).mean(axis=0))
        scales = np.where(scales > 1e-12, scales, 1.0)
        return cls(basis, means, scales)

    @property
    def dimension(self) -> int:
        return self.basis.dimension - 1

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        raw = self.basis(x)
        return ((raw - self.means) / self.scales)[:, 1:]


@dataclass(frozen=True)
class InitialFit:
    """Minimum-norm spline estimates.

    Attributes
    ----------
    subject_coef : (n, N0) array
        Coefficients of each subject curve in the scaled u-basis.
    additive_coef : list of (N_l, N0) arrays
        Coefficients of each additive surface.
    effective_rank : int
        Numerical rank of the tensor design.
    """

    grid: Grid
    u_basis: BSplineBasis
    cov_bases: tuple[CovariateBasis, ...]
    X: NDArray[np.float64] = field(repr=False)
    subject_coef: NDArray[np.float64] = field(repr=False)
    additive_coef: tuple[NDArray[np.float64], ...] = field(repr=False)
    effective_rank: int = 0

    @property
    def n_subjects(self) -> int:
        return self.subject_coef.shape[0]

    @property
    def n_covariates(self) -> int:
        return len(self.cov_bases)

    @property
    def u_scale(self) -> float:
        return float(np.sqrt(self.u_basis.dimension))

    @property
    def coefficients(self) -> NDArray[np.float64]:
        """Flattened coefficient vector, ordered like :func:`tensor_design`
        columns: subject blocks first, then the additive blocks."""
        blocks = [self.subject_coef] + list(self.additive_coef)
        return np.concatenate([b.ravel() for b in blocks])

    def u_design(self, u: ArrayLike | None = None) -> NDArray[np.float64]:
        u = self.grid.points if u is None else u
        return self.u_scale * self.u_basis(u)

    def subject_curves(self, u: ArrayLike | None = None) -> NDArray[np.float64]:
        """``g_{i,0}`` for every subject, shape ``(n, len(u))``."""
        # einsum keeps per-element summation order independent of n
        return np.einsum("ik,tk->it", self.subject_coef, self.u_design(u))

    def additive_at_subjects(self, l: int, u: ArrayLike | None = None) -> NDArray[np.float64]:
        """``g_l(u, X_{i,l})`` for every subject, shape ``(n, len(u))``."""
        return self.additive_surface(l, u, self.X[:, l])

    def additive_surface(self, l: int, u: ArrayLike | None, x: ArrayLike) -> NDArray[np.float64]:
        """``g_l`` on the lattice ``x`` by ``u``, shape ``(len(x), len(u))``."""
        cx = self.cov_bases[l](np.atleast_1d(x))
        return cx @ self.additive_coef[l] @ self.u_design(u).T

    def additive_total(self) -> NDArray[np.float64]:
        total = np.zeros((self.n_subjects, self.grid.count))
        for l in range(self.n_covariates):
            total += self.additive_at_subjects(l)
        return total

    def fitted(self) -> NDArray[np.float64]:
        return self.subject_curves() + self.additive_total()


def _curve_matrix(curves: Sequence[LqdCurve] | NDArray, grid: Grid | None) -> tuple[NDArray, Grid]:
    if isinstance(curves, np.ndarray):
        if grid is None:
            grid = Grid(curves.shape[1])
        if curves.ndim != 2 or curves.shape[1] != grid.count:
            raise GridMismatchError("curve matrix does not match the grid")
        return np.asarray(curves, dtype=float), grid
    grids = {c.grid for c in curves}
    if len(grids) != 1:
        raise GridMismatchError("curves do not share one grid")
    (shared,) = grids
    if grid is not None and grid != shared:
        raise GridMismatchError("curves do not live on the requested grid")
    return np.vstack([c.values for c in curves]), shared


def _loadings(cov_bases: Sequence[CovariateBasis], X: NDArray) -> NDArray:
    n = X.shape[0]
    blocks = [np.eye(n)] + [cb(X[:, l]) for l, cb in enumerate(cov_bases)]
    return np.hstack(blocks)


def tensor_design(fit_or_grid, u_basis=None, cov_bases=None, X=None) -> NDArray[np.float64]:
    """Dense design matrix with one row per (subject, grid point).

    Column order: ``n * N0`` subject columns (subject-major), then for each
    covariate ``N_l * N0`` columns ordered by covariate function then
    u-function.  Intended for checking and small problems.
    """
    if isinstance(fit_or_grid, InitialFit):
        fit = fit_or_grid
        grid, u_basis, cov_bases, X = fit.grid, fit.u_basis, fit.cov_bases, fit.X
    else:
        grid = fit_or_grid
    bu = np.sqrt(u_basis.dimension) * u_basis(grid.points)
    return np.kron(_loadings(cov_bases, X), bu)


def fit_initial(
    curves: Sequence[LqdCurve] | NDArray,
    X: ArrayLike | None = None,
    *,
    grid: Grid | None = None,
    order: int = 4,
    n_obs: int | None = None,
    u_knots: int | None = None,
    x_knots: int | Sequence[int] | None = None,
    rcond: float = 1e-10,
) -> InitialFit:
    """Least-squares spline fit of subject curves and additive surfaces.

    Parameters
    ----------
    curves : sequence of LqdCurve or (n, T) array
        Responses on a shared grid.
    X : (n, p) array, optional
        Covariates in [0, 1]; ``None`` or zero columns fits subject curves only.
    n_obs : int, optional
        Observations per subject driving the default knot counts; the grid
        size is used when omitted.
    u_knots, x_knots : int, optional
        Interior knot counts overriding the defaults.  ``x_knots`` may be
        given per covariate.
    """
    F, grid = _curve_matrix(curves, grid)
    n = F.shape[0]
    X = np.zeros((n, 0)) if X is None else np.asarray(X, dtype=float).reshape(n, -1)
    if np.any(X < 0) or np.any(X > 1):
        raise DomainError("covariates must lie in [0, 1]")
    p = X.shape[1]
    du, dx = default_knot_counts(n_obs or grid.count)
    u_basis = build_basis(order, du if u_knots is None else u_knots, "equispaced")
    if x_knots is None or np.isscalar(x_knots):
        x_knots = [dx if x_knots is None else int(x_knots)] * p
    cov_bases = tuple(
        CovariateBasis.from_data(build_basis(order, x_knots[l], "quantile", X[:, l]), X[:, l])
        for l in range(p)
    )

    bu = np.sqrt(u_basis.dimension) * u_basis(grid.points)
    A = _loadings(cov_bases, X)
    # per-subject LS coefficients, then min-norm split across the loadings
    bu_pinv = np.linalg.pinv(bu, rcond=rcond)
    coef_subject_ls = F @ bu_pinv.T
    gamma, _, rank_a, _ = np.linalg.lstsq(A, coef_subject_ls, rcond=rcond)
    rank_b = np.linalg.matrix_rank(bu, tol=rcond * np.linalg.norm(bu, 2))
    rank = int(rank_a * rank_b)
    if rank_b < u_basis.dimension:
        warnings.warn(
            f"u-basis of dimension {u_basis.dimension} is rank deficient on the grid "
            f"(effective rank {rank})",
            RankDeficiencyWarning,
            stacklevel=2,
        )

    splits = np.cumsum([n] + [cb.dimension for cb in cov_bases])
    blocks = np.split(gamma, splits[:-1], axis=0)
    subject_coef, additive = blocks[0], tuple(blocks[1:])
    for b in (subject_coef, *additive):
        b.setflags(write=False)
    Xc = X.copy()
    Xc.setflags(write=False)
    return InitialFit(grid, u_basis, cov_bases, Xc, subject_coef, additive, rank)


def eval_subject_curve(fit: InitialFit, i: int, u: ArrayLike) -> NDArray[np.float64] | float:
    """``g_{i,0}(u)`` for subject index ``i`` (0-based)."""
    if not 0 <= i < fit.n_subjects:
        raise IndexError(f"subject {i} out of range")
    # same product as InitialFit.subject_curves, so grid values agree exactly
    val = np.einsum("ik,tk->it", fit.subject_coef[i : i + 1], fit.u_design(np.atleast_1d(u)))[0]
    return float(val[0]) if np.ndim(u) == 0 else val


def eval_additive(fit: InitialFit, l: int, u: ArrayLike, x: ArrayLike) -> NDArray[np.float64] | float:
    """``g_l(u, x)`` evaluated pointwise (``u`` and ``x`` broadcast)."""
    if not 0 <= l < fit.n_covariates:
        raise IndexError(f"covariate {l} out of range")
    u_b, x_b = np.broadcast_arrays(np.atleast_1d(u), np.atleast_1d(x))
    bu = fit.u_design(u_b.ravel())
    cx = fit.cov_bases[l](x_b.ravel())
    val = np.einsum("rk,km,rm->r", cx, fit.additive_coef[l], bu).reshape(u_b.shape)
    if np.ndim(u) == 0 and np.ndim(x) == 0:
        return float(val[0])
    return val
