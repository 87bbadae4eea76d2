"""Post-clustering backfitted local-linear estimation.

Given a partition, group curves are local-linear smooths (in u) of the pooled
subject residuals of their group.  Each additive surface is then refined by a
kernel average in u followed by a local-linear smooth across subjects in the
covariate direction.  Bandwidths may be chosen by leave-one-grid-point-out
cross-validation.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .clustering import Partition
from .density import Grid, kernel
from .exceptions import EmptyWindowError, GridMismatchError
from .splines import InitialFit

__all__ = [
    "Bandwidths",
    "RefinedFit",
    "default_bandwidths",
    "local_linear_weights",
    "group_partial_residual",
    "group_curves",
    "estimate_group_curve",
    "additive_partial_residual",
    "u_smoothing_weights",
    "estimate_refined_additive",
    "refine",
    "cv_score",
    "cv_bandwidths",
]


@dataclass(frozen=True)
class Bandwidths:
    """Group-curve bandwidth ``h0`` and per-covariate (u, x) bandwidths."""

    h0: float
    h_lu: tuple[float, ...] = ()
    h_lx: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "h_lu", tuple(float(h) for h in self.h_lu))
        object.__setattr__(self, "h_lx", tuple(float(h) for h in self.h_lx))
        if len(self.h_lu) != len(self.h_lx):
            raise ValueError("need one u- and one x-bandwidth per covariate")
        if not 0 < self.h0 < 1:
            raise ValueError(f"h0 must lie in (0, 1), got {self.h0}")
        if any(h <= 0 for h in self.h_lu) or any(not 0 < h < 1 for h in self.h_lx):
            raise ValueError("covariate bandwidths must be positive and h_lx < 1")

    def scaled(self, f0: float, fu: float, fx: float) -> "Bandwidths":
        return Bandwidths(self.h0 * f0, tuple(h * fu for h in self.h_lu),
                          tuple(h * fx for h in self.h_lx))

    def as_dict(self) -> dict:
        return {"h0": self.h0, "h_lu": list(self.h_lu), "h_lx": list(self.h_lx)}


def default_bandwidths(n: int, n_points: int, p: int) -> Bandwidths:
    """Rate defaults: ``h0 = (nT)^(-1/5)``, ``h_lu = h_lx = n^(-1/5)``."""
    hc = n ** -0.2
    return Bandwidths((n * n_points) ** -0.2, (hc,) * p, (min(hc, 0.95),) * p)


def local_linear_weights(
    eval_points: ArrayLike,
    sample_points: ArrayLike,
    h: float,
    kernel_name: str = "epanechnikov",
    mask: NDArray | None = None,
) -> NDArray[np.float64]:
    """Normalized local-linear weights, shape ``(..., n_eval, n_sample)``.

    Row ``e`` holds ``K(d)(c2 - d c1) / sum(...)`` with ``d = (s - x_e) / h``
    and ``c_j = sum K(d) d^j``.  ``mask`` (broadcastable to the output)
    zeroes individual sample points, e.g. for leave-one-out.
    """
    x = np.asarray(eval_points, dtype=float)
    s = np.asarray(sample_points, dtype=float)
    d = (s[None, :] - x[:, None]) / h
    k = kernel(d, kernel_name)
    if mask is not None:
        k = k * mask
    c1 = (k * d).sum(axis=-1, keepdims=True)
    c2 = (k * d * d).sum(axis=-1, keepdims=True)
    w = k * (c2 - d * c1)
    total = w.sum(axis=-1, keepdims=True)
    scale = np.maximum(c2 * k.sum(axis=-1, keepdims=True), 1e-300)
    if np.any(np.abs(total) <= 1e-12 * scale):
        raise EmptyWindowError(f"local-linear window empty at bandwidth {h:.4g}")
    return w / total


# --------------------------------------------------------------------------
# group curves
# --------------------------------------------------------------------------

def _response_matrix(curves, grid: Grid | None = None) -> NDArray:
    if isinstance(curves, np.ndarray):
        return curves
    return np.vstack([c.values for c in curves])


def group_partial_residual(f_hat, fit: InitialFit) -> NDArray[np.float64]:
    """Subject curves minus every fitted additive component."""
    F = _response_matrix(f_hat)
    if F.shape != (fit.n_subjects, fit.grid.count):
        raise GridMismatchError("curves do not match the initial fit")
    return F - fit.additive_total()


def group_curves(
    residuals: ArrayLike,
    partition: Partition,
    h0: float,
    grid: Grid | None = None,
    u: ArrayLike | None = None,
    kernel_name: str = "epanechnikov",
) -> NDArray[np.float64]:
    """Local-linear group curves, shape ``(K, len(u))``.

    Pooling every subject of a group at each grid point makes the estimate
    the local-linear smooth of the group's mean residual curve.
    """
    R = np.asarray(residuals, dtype=float)
    grid = grid or Grid(R.shape[1])
    u = grid.points if u is None else np.atleast_1d(u)
    W = local_linear_weights(u, grid.points, h0, kernel_name)
    means = np.vstack([R[g].mean(axis=0) for g in partition.groups])
    return means @ W.T


def estimate_group_curve(
    residuals: ArrayLike,
    partition: Partition,
    k: int,
    u: ArrayLike,
    h0: float,
    kernel_name: str = "epanechnikov",
) -> NDArray[np.float64] | float:
    """Group curve of group ``k`` (1-based) at ``u``."""
    R = np.asarray(residuals, dtype=float)
    members = partition.groups[k - 1]
    grid = Grid(R.shape[1])
    W = local_linear_weights(np.atleast_1d(u), grid.points, h0, kernel_name)
    val = W @ R[members].mean(axis=0)
    return float(val[0]) if np.ndim(u) == 0 else val


# --------------------------------------------------------------------------
# refined additive components
# --------------------------------------------------------------------------

def additive_partial_residual(
    f_hat, fit: InitialFit, curves: NDArray, partition: Partition, l: int
) -> NDArray[np.float64]:
    """``f_i - m_{k(i)} - sum_{j != l} g_j(., X_{i,j})`` for every subject."""
    F = _response_matrix(f_hat)
    if F.shape != (fit.n_subjects, fit.grid.count) or curves.shape[1] != fit.grid.count:
        raise GridMismatchError("curves do not match the initial fit")
    out = F - curves[partition.labels - 1]
    for j in range(fit.n_covariates):
        if j != l:
            out = out - fit.additive_at_subjects(j)
    return out


def u_smoothing_weights(
    grid: Grid,
    h: float,
    u: ArrayLike | None = None,
    kernel_name: str = "epanechnikov",
    mask: NDArray | None = None,
) -> NDArray[np.float64]:
    """Kernel averaging weights in the u-direction.

    Row ``e`` discretizes ``int W((u_e - v)/h) r(v) dv / int W((u_e - v)/h) dv``
    with the trapezoid rule on ``grid``.
    """
    u = grid.points if u is None else np.atleast_1d(u)
    w = kernel((u[:, None] - grid.points[None, :]) / h, kernel_name) * grid.trapezoid_weights()
    if mask is not None:
        w = w * mask
    total = w.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise EmptyWindowError(f"u-window empty at bandwidth {h:.4g}")
    return w / total


def estimate_refined_additive(
    residuals: ArrayLike,
    x_obs: ArrayLike,
    u: ArrayLike | None,
    x: ArrayLike,
    h_lu: float,
    h_lx: float,
    kernel_k: str = "epanechnikov",
    kernel_w: str = "epanechnikov",
) -> NDArray[np.float64]:
    """Refined surface on the lattice ``x`` by ``u``, shape ``(len(x), len(u))``.

    Parameters
    ----------
    residuals : (n, T) array
        Partial residual curves for this covariate on the shared grid.
    x_obs : (n,) array
        The covariate values of the subjects.
    """
    R = np.asarray(residuals, dtype=float)
    grid = Grid(R.shape[1])
    Wu = u_smoothing_weights(grid, h_lu, u, kernel_w)
    Wx = local_linear_weights(np.atleast_1d(x), np.asarray(x_obs, dtype=float), h_lx, kernel_k)
    return Wx @ (R @ Wu.T)


# --------------------------------------------------------------------------
# full refinement
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RefinedFit:
    """Post-clustering estimates given a partition and bandwidths."""

    grid: Grid
    partition: Partition
    bandwidths: Bandwidths
    group_curves: NDArray[np.float64] = field(repr=False)
    additive_residuals: tuple[NDArray[np.float64], ...] = field(repr=False)
    X: NDArray[np.float64] = field(repr=False)
    kernel_name: str = "epanechnikov"

    @property
    def n_covariates(self) -> int:
        return len(self.additive_residuals)

    def subject_curves(self) -> NDArray[np.float64]:
        """Each subject's group curve, shape ``(n, T)``."""
        return self.group_curves[self.partition.labels - 1]

    def additive_surface(self, l: int, x: ArrayLike, u: ArrayLike | None = None) -> NDArray:
        return estimate_refined_additive(
            self.additive_residuals[l], self.X[:, l], u, x,
            self.bandwidths.h_lu[l], self.bandwidths.h_lx[l],
            self.kernel_name, self.kernel_name,
        )

    def additive_at_subjects(self, l: int) -> NDArray[np.float64]:
        """``g_l(u_t, X_{i,l})`` for every subject, shape ``(n, T)``."""
        return self.additive_surface(l, self.X[:, l])

    def fitted(self, covariates: Sequence[int] | None = None) -> NDArray[np.float64]:
        """Fitted LQD curves using the given covariates (all by default)."""
        covariates = range(self.n_covariates) if covariates is None else covariates
        out = self.subject_curves().copy()
        for l in covariates:
            out += self.additive_at_subjects(l)
        return out

    def x_lattice(self, l: int, count: int = 51) -> NDArray[np.float64]:
        lo, hi = np.clip([self.X[:, l].min(), self.X[:, l].max()], 0.0, 1.0)
        return np.linspace(lo, hi, count)


def refine(
    f_hat,
    fit: InitialFit,
    partition: Partition,
    bandwidths: Bandwidths | None = None,
    kernel_name: str = "epanechnikov",
) -> RefinedFit:
    """One backfitting pass: group curves, then refined additive surfaces."""
    F = _response_matrix(f_hat)
    n, T = F.shape
    if bandwidths is None:
        bandwidths = default_bandwidths(n, T, fit.n_covariates)
    R0 = group_partial_residual(F, fit)
    curves = group_curves(R0, partition, bandwidths.h0, fit.grid, kernel_name=kernel_name)
    resid = tuple(
        additive_partial_residual(F, fit, curves, partition, l) for l in range(fit.n_covariates)
    )
    return RefinedFit(fit.grid, partition, bandwidths, curves, resid, fit.X, kernel_name)


# --------------------------------------------------------------------------
# cross-validation
# --------------------------------------------------------------------------

@functools.lru_cache(maxsize=8)
def _loo_weights(count: int, h0: float, kernel_name: str) -> NDArray[np.float64]:
    """Local-linear weights ``w[t, e, s]`` of the fit without grid point t."""
    pts = Grid(count).points
    mask = 1.0 - np.eye(count)[:, None, :]       # (t, eval, sample)
    d = (pts[None, :] - pts[:, None]) / h0        # (eval, sample)
    k = kernel(d, kernel_name)[None, :, :] * mask
    c1 = (k * d).sum(-1, keepdims=True)
    c2 = (k * d * d).sum(-1, keepdims=True)
    w = k * (c2 - d * c1)
    total = w.sum(-1, keepdims=True)
    if np.any(np.abs(total) <= 1e-12 * np.maximum(c2 * k.sum(-1, keepdims=True), 1e-300)):
        raise EmptyWindowError(f"leave-one-out window empty at bandwidth {h0:.4g}")
    w = w / total
    w.setflags(write=False)
    return w


def _loo_group_curves(means: NDArray, grid: Grid, h0: float, kernel_name: str):
    """Leave-one-grid-point-out group curves.

    Returns ``at_t`` of shape ``(K, T)`` (curve without point t, evaluated at
    u_t) and ``full`` of shape ``(T, K, T)`` (curve without point t, evaluated
    everywhere).
    """
    T = grid.count
    w = _loo_weights(T, float(h0), kernel_name)
    full = np.einsum("tes,ks->tke", w, means, optimize=True)
    at_t = full[np.arange(T), :, np.arange(T)].T
    return at_t, full


def cv_score(f_hat, fit: InitialFit, partition: Partition, bandwidths: Bandwidths,
             kernel_name: str = "epanechnikov") -> float:
    """Leave-one-grid-point-out prediction error of the refined model."""
    F = _response_matrix(f_hat)
    n, T = F.shape
    grid = fit.grid
    labels = partition.labels - 1
    R0 = group_partial_residual(F, fit)
    means = np.vstack([R0[g].mean(axis=0) for g in partition.groups])
    m_at_t, m_full = _loo_group_curves(means, grid, bandwidths.h0, kernel_name)
    pred = m_at_t[labels]

    eye = np.eye(T)
    add = [fit.additive_at_subjects(j) for j in range(fit.n_covariates)]
    total_add = sum(add) if add else np.zeros_like(F)
    for l in range(fit.n_covariates):
        Wu = u_smoothing_weights(grid, bandwidths.h_lu[l], kernel_name=kernel_name,
                                 mask=1.0 - eye)
        base = F - (total_add - add[l])
        smooth = base @ Wu.T
        # subtract the leave-t-out group curve smoothed over v != t
        m_term = np.einsum("tv,tkv->kt", Wu, m_full)
        S = smooth - m_term[labels]
        Wx = local_linear_weights(fit.X[:, l], fit.X[:, l], bandwidths.h_lx[l], kernel_name)
        pred = pred + Wx @ S
    return float(np.mean((F - pred) ** 2))


def cv_bandwidths(
    f_hat,
    fit: InitialFit,
    partition: Partition,
    candidates: Sequence[Bandwidths] | None = None,
    base: Bandwidths | None = None,
    factors: Sequence[float] = (0.5, 1.0, 2.0),
    kernel_name: str = "epanechnikov",
) -> tuple[Bandwidths, list[tuple[Bandwidths, float]]]:
    """Pick the candidate bandwidths with the smallest CV score.

    Without explicit candidates, every combination of ``factors`` applied
    to ``h0``, the u- and the x-bandwidths of ``base`` is scored (the
    rate-based defaults when ``base`` is omitted).  Candidates whose windows
    are empty are skipped.  A CV surface flat to 1e-10 returns ``base``.
    """
    F = _response_matrix(f_hat)
    n, T = F.shape
    base = base or default_bandwidths(n, T, fit.n_covariates)
    if candidates is None:
        candidates = []
        for f0, fu, fx in itertools.product(factors, repeat=3):
            try:
                candidates.append(base.scaled(f0, fu, fx))
            except ValueError:
                continue
        if fit.n_covariates == 0:
            candidates = list(dict.fromkeys(candidates))
    if not candidates:
        raise ValueError("no bandwidth candidates")
    scores = []
    for cand in candidates:
        try:
            scores.append((cand, cv_score(F, fit, partition, cand, kernel_name)))
        except EmptyWindowError:
            continue
    if not scores:
        return base, scores
    values = np.array([s for _, s in scores])
    if values.max() - values.min() <= 1e-10 and len(scores) > 1:
        return base, scores
    return scores[int(np.argmin(values))][0], scores
