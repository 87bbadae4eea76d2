"""Latent group structure and additive covariate effects for samples of
densities, estimated through log quantile density (LQD) curves."""

from .clustering import Partition, hac, nmi, purity
from .density import DensityCurve, Grid, LqdCurve, RawSample, estimate_density, lqd_inverse, lqd_transform
from .pipeline import ModelFit, fit_model
from .selection import backward_eliminate, fve, wasserstein2

__version__ = "0.1.0"

__all__ = [
    "DensityCurve",
    "Grid",
    "LqdCurve",
    "ModelFit",
    "Partition",
    "RawSample",
    "backward_eliminate",
    "estimate_density",
    "fit_model",
    "fve",
    "hac",
    "lqd_inverse",
    "lqd_transform",
    "nmi",
    "purity",
    "wasserstein2",
]
