"""Covariate importance by fraction of variance explained (FVE) and backward
elimination, measured with the 2-Wasserstein distance between observed and
fitted densities.

For univariate distributions the 2-Wasserstein distance is the L2 distance
between quantile functions, so every comparison here reduces to quantile
curves on the shared probability grid.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .clustering import Partition
from .density import (
    DensityCurve,
    Grid,
    LqdCurve,
    _trapz,
    density_to_quantile,
    lqd_inverse,
    quantile_from_lqd,
)
from .exceptions import DegenerateFitError, DensGroupError, GridMismatchError
from .pipeline import ModelFit, fit_model
from .smoothing import RefinedFit

__all__ = [
    "FveStep",
    "FveReport",
    "wasserstein2",
    "quantile_matrix",
    "lqd_quantiles",
    "fitted_densities",
    "fve_table",
    "fve",
    "backward_eliminate",
]

# Quantile functions take values in [0, 1], so squared distances below this
# per-subject floor are rounding noise rather than lack of fit.
EXACT_FIT_TOL = 1e-20


def wasserstein2(a: DensityCurve, b: DensityCurve) -> float:
    """2-Wasserstein distance between two densities on the same grid.

    Computed as the L2 norm of the difference of the quantile functions,
    integrated over the probability grid with the trapezoid rule.
    """
    if a.grid != b.grid:
        raise GridMismatchError("densities live on different grids")
    qa, qb = density_to_quantile(a).values, density_to_quantile(b).values
    return float(np.sqrt(max(_trapz((qa - qb) ** 2, a.grid), 0.0)))


def quantile_matrix(densities: Sequence[DensityCurve]) -> NDArray[np.float64]:
    """Quantile functions of several densities as rows of an array."""
    return np.vstack([density_to_quantile(z).values for z in densities])


def lqd_quantiles(curves: ArrayLike, grid: Grid) -> NDArray[np.float64]:
    """Quantile functions of the densities whose LQD curves are the rows."""
    F = np.atleast_2d(np.asarray(curves, dtype=float))
    return np.vstack([quantile_from_lqd(LqdCurve(grid, f), grid.points) for f in F])


def fitted_densities(curves: ArrayLike, grid: Grid) -> list[DensityCurve]:
    """Densities ``Psi^{-1}(f)`` for each row ``f`` of fitted LQD curves."""
    F = np.atleast_2d(np.asarray(curves, dtype=float))
    return [lqd_inverse(LqdCurve(grid, f)) for f in F]


def _sq_dist(Qa: NDArray, Qb: NDArray, grid: Grid) -> NDArray[np.float64]:
    return np.maximum(_trapz((Qa - Qb) ** 2, grid, axis=-1), 0.0)


def _observed_quantiles(observed, grid: Grid) -> NDArray[np.float64]:
    if isinstance(observed, np.ndarray):
        Q = observed
    else:
        Q = quantile_matrix(observed)
    if Q.shape[1] != grid.count:
        raise GridMismatchError("observed densities do not match the fit grid")
    return Q


def fve_table(
    fit: RefinedFit, observed: Sequence[DensityCurve] | NDArray
) -> tuple[dict[int, float], dict[int, float], float]:
    """FVE of every covariate in ``fit``.

    Parameters
    ----------
    fit : RefinedFit
        Post-clustering fit.
    observed : sequence of DensityCurve or (n, T) array
        Observed densities, or their quantile functions on the fit grid.

    Returns
    -------
    fves : dict
        ``V_l / V_inf`` keyed by covariate position in ``fit``.
    gains : dict
        ``V_l`` keyed likewise.
    v_inf : float
        Total squared discrepancy of the group-curve-only fit.
    """
    grid = fit.grid
    Qz = _observed_quantiles(observed, grid)
    base = fit.subject_curves()
    d0 = _sq_dist(Qz, lqd_quantiles(base, grid), grid)
    v_inf = float(d0.sum())
    if v_inf <= EXACT_FIT_TOL * len(d0):
        raise DegenerateFitError("group curves fit every density exactly (V_inf = 0)")
    gains, fves = {}, {}
    for l in range(fit.n_covariates):
        dl = _sq_dist(Qz, lqd_quantiles(base + fit.additive_at_subjects(l), grid), grid)
        gains[l] = float(v_inf - dl.sum())
        fves[l] = gains[l] / v_inf
    return fves, gains, v_inf


def fve(fit: RefinedFit, observed: Sequence[DensityCurve] | NDArray, l: int) -> float:
    """Fraction of variance explained by covariate ``l`` (0-based)."""
    if not 0 <= l < fit.n_covariates:
        raise IndexError(f"covariate {l} out of range")
    return fve_table(fit, observed)[0][l]


def model_mse(fit: RefinedFit, observed: Sequence[DensityCurve] | NDArray) -> float:
    """Mean squared Wasserstein discrepancy of the full fitted model."""
    Qz = _observed_quantiles(observed, fit.grid)
    return float(_sq_dist(Qz, lqd_quantiles(fit.fitted(), fit.grid), fit.grid).mean())


@dataclass
class FveStep:
    """One elimination step: the model fitted on ``covariates``."""

    step: int
    covariates: list[str]
    mse: float
    fve: dict[str, float]
    candidate: str | None = None
    accepted: bool | None = None


@dataclass
class FveReport:
    """Trace of a backward elimination run."""

    names: list[str]
    steps: list[FveStep] = field(default_factory=list)
    partition: Partition | None = field(default=None, repr=False)
    error: str | None = None

    @property
    def elimination_order(self) -> list[str]:
        """Covariates actually removed, in order."""
        return [s.candidate for s in self.steps if s.accepted]

    @property
    def first_candidate(self) -> str | None:
        """The covariate with the smallest FVE in the full model."""
        return self.steps[0].candidate if self.steps else None

    @property
    def final(self) -> list[str]:
        if not self.steps:
            return list(self.names)
        removed = set(self.elimination_order)
        return [c for c in self.names if c not in removed]

    @property
    def mses(self) -> list[float]:
        return [s.mse for s in self.steps]

    def to_dict(self) -> dict:
        return {
            "covariates": self.names,
            "elimination_order": self.elimination_order,
            "final": self.final,
            "error": self.error,
            "steps": [
                {
                    "step": s.step,
                    "covariates": s.covariates,
                    "mse": s.mse,
                    "fve": s.fve,
                    "candidate": s.candidate,
                    "accepted": s.accepted,
                }
                for s in self.steps
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        """One row per (step, covariate) with the step's MSE."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "covariate", "fve", "mse", "candidate", "accepted"])
        for s in self.steps:
            for name in s.covariates:
                w.writerow([s.step, name, repr(s.fve[name]), repr(s.mse),
                            int(name == s.candidate), "" if s.accepted is None else int(s.accepted)])
            if not s.covariates:
                w.writerow([s.step, "", "", repr(s.mse), "", ""])
        return buf.getvalue()


def backward_eliminate(
    lqd: ArrayLike,
    X: ArrayLike,
    observed: Sequence[DensityCurve] | NDArray,
    *,
    grid: Grid | None = None,
    names: Sequence[str] | None = None,
    partition: Partition | None = None,
    recluster: bool = False,
    n_obs: int | None = None,
    criterion: str = "gbic",
    k: int | None = None,
    cv: bool = True,
) -> FveReport:
    """Drop the least important covariate until the model MSE rises.

    The model with every covariate is fitted first (selecting the partition
    unless one is given).  At each step the included covariate with the
    smallest FVE is removed and the model refitted; the removal is kept
    when the mean squared Wasserstein error does not increase, otherwise
    elimination stops and the last step is marked rejected.

    Parameters
    ----------
    lqd : (n, T) array
        Observed LQD curves.
    X : (n, p) array
        Covariates in [0, 1].
    observed : sequence of DensityCurve or (n, T) array
        Observed densities (or their quantile functions).
    partition : Partition, optional
        Group structure to condition on.  Estimated from the full model
        when omitted.
    recluster : bool
        Re-estimate the partition after every removal instead of holding
        the first one fixed.
    """
    F = np.asarray(lqd, dtype=float)
    X = np.asarray(X, dtype=float).reshape(F.shape[0], -1)
    n, T = F.shape
    p = X.shape[1]
    if p < 1:
        raise ValueError("backward elimination needs at least one covariate")
    grid = grid or Grid(T)
    names = [f"x{l + 1}" for l in range(p)] if names is None else list(names)
    if len(names) != p:
        raise ValueError("one name per covariate required")
    Qz = _observed_quantiles(observed, grid)

    def fit_on(cols: list[int], part: Partition | None) -> ModelFit:
        return fit_model(F, X[:, cols], grid=grid, n_obs=n_obs, criterion=criterion,
                         k=k, partition=part, cv=cv)

    report = FveReport(names)
    included = list(range(p))
    try:
        model = fit_on(included, partition)
    except (DensGroupError, ValueError, np.linalg.LinAlgError) as err:
        report.error = f"{type(err).__name__}: {err}"
        return report
    fixed = None if recluster else model.partition
    report.partition = model.partition
    step = 0
    while True:
        try:
            mse = model_mse(model.refined, Qz)
            fves = fve_table(model.refined, Qz)[0] if included else {}
        except DensGroupError as err:
            report.error = f"{type(err).__name__}: {err}"
            return report
        current = FveStep(step, [names[c] for c in included], mse,
                          {names[c]: fves[j] for j, c in enumerate(included)})
        report.steps.append(current)
        if len(report.steps) > 1:
            prev = report.steps[-2]
            prev.accepted = mse <= prev.mse
            if not prev.accepted:
                return report
        if not included:
            return report
        # ties go to the earliest covariate
        drop = included[min(range(len(included)), key=lambda j: (fves[j], j))]
        current.candidate = names[drop]
        included = [c for c in included if c != drop]
        step += 1
        try:
            model = fit_on(included, fixed)
        except (DensGroupError, ValueError, np.linalg.LinAlgError) as err:
            report.error = f"{type(err).__name__}: {err}"
            return report
