"""End-to-end estimation: densities -> LQD curves -> spline fit -> HAC with
group-count selection -> local-linear refinement."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .clustering import IcTrace, Partition, distance_matrix, hac, hac_path, select_k
from .density import (
    DensityCurve,
    Grid,
    RawSample,
    estimate_density,
    lqd_transform,
)
from .smoothing import (
    Bandwidths,
    RefinedFit,
    cv_bandwidths,
    default_bandwidths,
    group_curves,
    group_partial_residual,
    refine,
)
from .splines import InitialFit, fit_initial

__all__ = ["ModelFit", "densities_from_samples", "lqd_matrix", "fit_model"]


@dataclass
class ModelFit:
    """Everything produced by one run of the estimation pipeline."""

    lqd: NDArray[np.float64] = field(repr=False)
    initial: InitialFit = field(repr=False)
    partition: Partition = None
    refined: RefinedFit = field(default=None, repr=False)
    trace: IcTrace | None = field(default=None, repr=False)
    distances: NDArray[np.float64] | None = field(default=None, repr=False)
    cv_scores: list = field(default_factory=list, repr=False)

    @property
    def k(self) -> int:
        return self.partition.k


def densities_from_samples(
    samples: Sequence[RawSample | ArrayLike],
    grid: Grid | None = None,
    h: float | None = None,
    kernel_name: str = "epanechnikov",
) -> list[DensityCurve]:
    grid = grid or Grid()
    return [estimate_density(s, h, kernel_name, grid) for s in samples]


def lqd_matrix(densities: Sequence[DensityCurve]) -> NDArray[np.float64]:
    return np.vstack([lqd_transform(z).values for z in densities])


def fit_model(
    lqd: ArrayLike,
    X: ArrayLike | None = None,
    *,
    grid: Grid | None = None,
    n_obs: int | None = None,
    k: int | None = None,
    k_max: int = 8,
    criterion: str = "gbic",
    q_norm: float = 2,
    partition: Partition | None = None,
    bandwidths: Bandwidths | None = None,
    cv: bool = True,
    initial: InitialFit | None = None,
    order: int = 4,
) -> ModelFit:
    """Run the estimation pipeline on LQD curves.

    Parameters
    ----------
    lqd : (n, T) array
        LQD curves on ``grid``.
    X : (n, p) array, optional
        Covariates in [0, 1].
    n_obs : int, optional
        Raw observations per subject; sets the default spline dimensions.
    k : int, optional
        Fixed group count.  When omitted the count minimizing ``criterion``
        over ``1..k_max`` is used.
    partition : Partition, optional
        Use this partition instead of clustering (e.g. the true one).
    bandwidths : Bandwidths, optional
        Refinement bandwidths; chosen by cross-validation when ``cv`` is
        set, otherwise the rate defaults.
    """
    F = np.asarray(lqd, dtype=float)
    n, T = F.shape
    grid = grid or Grid(T)
    fit = initial or fit_initial(F, X, grid=grid, n_obs=n_obs, order=order)
    base = default_bandwidths(n, T, fit.n_covariates)
    residuals = group_partial_residual(F, fit)
    out = ModelFit(F, fit)

    if partition is None:
        D = distance_matrix(fit.subject_curves(), q_norm)
        out.distances = D
        if k is None:
            h0 = base.h0

            def smoother(R, part):
                return group_curves(R, part, h0, grid)

            trace = select_k(residuals, D, smoother, k_max=k_max, criterion=criterion, h=h0)
            out.trace = trace
            partition = trace.partitions[trace.k_hat]
        else:
            partition = hac(D, k)
    out.partition = partition

    if bandwidths is None:
        if cv:
            bandwidths, out.cv_scores = cv_bandwidths(F, fit, partition, base=base)
        else:
            bandwidths = base
    out.refined = refine(F, fit, partition, bandwidths)
    return out
