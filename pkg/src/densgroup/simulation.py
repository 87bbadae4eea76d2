"""Synthetic three-group data and the Monte Carlo harness.

Random streams: replication ``r`` draws its covariates from
``SeedSequence(seed, spawn_key=(r, 0))`` and subject ``i`` (0-based) draws its
error coefficients and observations from ``SeedSequence(seed,
spawn_key=(r, i + 1))``.  Results therefore do not depend on how
replications are scheduled.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import ndtr

from .clustering import Partition, nmi, purity
from .density import Grid, LqdCurve, RawSample, quantile_from_lqd
from .exceptions import GridMismatchError
from .pipeline import densities_from_samples, fit_model, lqd_matrix
from .splines import fit_initial

__all__ = [
    "DgpConfig",
    "SyntheticDataset",
    "McReport",
    "true_group_curve",
    "true_additive",
    "gen_covariates",
    "sample_subject",
    "generate_dataset",
    "rmse_curves",
    "run_replication",
    "run_mc",
]

log = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)


def true_group_curve(k: int, u: ArrayLike) -> NDArray[np.float64] | float:
    """Group curves of the three-group design."""
    u = np.asarray(u, dtype=float)
    if k == 1:
        val = SQRT2 * np.sin(2 * np.pi * u)
    elif k == 2:
        val = SQRT2 * np.cos(2 * np.pi * u)
    elif k == 3:
        val = 6.0 * (2 * u - 6 * u**2 + 4 * u**3 + 0.05)
    else:
        raise ValueError(f"no group {k}")
    return float(val) if val.ndim == 0 else val


def true_additive(l: int, u: ArrayLike, x: ArrayLike) -> NDArray[np.float64] | float:
    """Additive surfaces ``sin(2 pi u)(2x - 1)`` and ``sin(2 pi u) sin(2 pi x)``."""
    u = np.asarray(u, dtype=float)
    x = np.asarray(x, dtype=float)
    if l == 1:
        val = np.sin(2 * np.pi * u) * (2 * x - 1)
    elif l == 2:
        val = np.sin(2 * np.pi * u) * np.sin(2 * np.pi * x)
    else:
        raise ValueError(f"no additive component {l}")
    return float(val) if val.ndim == 0 else val


@dataclass(frozen=True)
class DgpConfig:
    n: int = 100
    T: int = 100
    group_fractions: tuple[float, ...] = (0.3, 0.3, 0.4)
    covariate_correlation: float = 0.5
    error_sds: tuple[float, float] = (0.1, 0.05)
    seed: int = 0
    grid_count: int = 101
    sampling_grid_count: int = 1001
    noise_covariates: int = 0

    def __post_init__(self):
        if abs(sum(self.group_fractions) - 1.0) > 1e-9:
            raise ValueError("group fractions must sum to 1")
        if self.T < 10:
            raise ValueError("need at least 10 observations per subject")
        if not -1 < self.covariate_correlation < 1:
            raise ValueError("correlation must lie in (-1, 1)")

    def group_sizes(self) -> list[int]:
        sizes = [int(round(self.n * f)) for f in self.group_fractions]
        sizes[-1] = self.n - sum(sizes[:-1])
        return sizes


@dataclass
class SyntheticDataset:
    samples: list[RawSample] = field(repr=False)
    X: NDArray[np.float64] = field(repr=False)
    truth: Partition = field(repr=False)
    mu: NDArray[np.float64] = field(repr=False)
    g0: NDArray[np.float64] = field(repr=False)
    grid: Grid = field(default_factory=Grid)
    error_coef: NDArray[np.float64] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.samples)

    def additive_truth(self, l: int) -> NDArray[np.float64]:
        """``g_l(u_t, X_{i,l})`` for the informative covariates (1-based l)."""
        return true_additive(l, self.grid.points[None, :], self.X[:, l - 1][:, None])

    def to_csv_texts(self) -> dict[str, str]:
        """The dataset in the ingestion format of ``densgroup fit``.

        Returns the text of ``samples.csv`` (``subject_id,value``),
        ``covariates.csv`` (``subject_id,x1,...,xp``) and ``truth.csv``
        (the generating partition).
        """
        ids = [f"s{i + 1:03d}" for i in range(self.n)]
        samples = io.StringIO()
        w = csv.writer(samples, lineterminator="\n")
        w.writerow(["subject_id", "value"])
        for sid, s in zip(ids, self.samples):
            w.writerows([sid, repr(float(v))] for v in s.values)
        cov = io.StringIO()
        w = csv.writer(cov, lineterminator="\n")
        w.writerow(["subject_id"] + [f"x{l + 1}" for l in range(self.X.shape[1])])
        w.writerows([sid] + [repr(float(v)) for v in row] for sid, row in zip(ids, self.X))
        return {
            "samples.csv": samples.getvalue(),
            "covariates.csv": cov.getvalue(),
            "truth.csv": self.truth.to_csv(ids),
        }


def gen_covariates(n: int, correlation: float, rng: np.random.Generator) -> NDArray[np.float64]:
    """Gaussian-copula covariates with Uniform(0, 1) marginals."""
    if not -1 < correlation < 1:
        raise ValueError("correlation must lie in (-1, 1)")
    cov = np.array([[1.0, correlation], [correlation, 1.0]])
    v = rng.multivariate_normal(np.zeros(2), cov, size=n, method="cholesky")
    return ndtr(v)


def sample_subject(
    subject_id: int,
    lqd: LqdCurve,
    T: int,
    rng: np.random.Generator,
) -> RawSample:
    """``T`` inverse-transform draws from the density whose LQD is ``lqd``."""
    u = rng.uniform(size=T)
    return RawSample(subject_id, quantile_from_lqd(lqd, u))


def _subject_rng(seed: int, replication: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replication, i + 1)))


def generate_dataset(config: DgpConfig, replication: int = 0) -> SyntheticDataset:
    """Draw one dataset: covariates, group labels, error curves and samples."""
    shared = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(replication, 0)))
    X = gen_covariates(config.n, config.covariate_correlation, shared)
    if config.noise_covariates:
        X = np.hstack([X, shared.uniform(size=(config.n, config.noise_covariates))])
    labels = np.repeat(np.arange(1, len(config.group_fractions) + 1), config.group_sizes())
    fine = Grid(config.sampling_grid_count)
    grid = Grid(config.grid_count)

    samples, mu_rows, g0_rows, errs = [], [], [], []
    for i in range(config.n):
        rng = _subject_rng(config.seed, replication, i)
        e1, e2 = rng.normal(0.0, config.error_sds[0]), rng.normal(0.0, config.error_sds[1])
        errs.append((e1, e2))

        def mu(u, i=i):
            val = true_group_curve(int(labels[i]), u)
            return val + true_additive(1, u, X[i, 0]) + true_additive(2, u, X[i, 1])

        u = fine.points
        f = mu(u) + e1 * np.sin(np.pi * u) + e2 * np.sin(2 * np.pi * u)
        samples.append(sample_subject(i + 1, LqdCurve(fine, f), config.T, rng))
        mu_rows.append(mu(grid.points))
        g0_rows.append(true_group_curve(int(labels[i]), grid.points))
    return SyntheticDataset(
        samples, X, Partition(labels), np.vstack(mu_rows), np.vstack(g0_rows), grid,
        np.asarray(errs),
    )


def rmse_curves(
    estimates: ArrayLike, truths: ArrayLike, partition: Partition | None = None
) -> float:
    """Subject-averaged root mean squared error over the grid.

    With ``partition`` given, ``estimates`` holds one row per group and each
    subject is compared with the curve of its group.
    """
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    if partition is not None:
        est = est[partition.labels - 1]
    if est.shape != tru.shape:
        raise GridMismatchError(f"shapes {est.shape} and {tru.shape} differ")
    return float(np.mean(np.sqrt(np.mean((est - tru) ** 2, axis=1))))


def run_replication(
    config: DgpConfig,
    replication: int,
    criteria: tuple[str, ...] = ("gaic", "gbic"),
    cv: bool = True,
    k_max: int = 8,
) -> dict:
    """One pass of the full pipeline on a fresh dataset, with metrics."""
    data = generate_dataset(config, replication)
    grid = data.grid
    F = lqd_matrix(densities_from_samples(data.samples, grid))
    fit = fit_initial(F, data.X, grid=grid, n_obs=config.T)
    n_inf = min(2, fit.n_covariates)
    add_truth = [data.additive_truth(l + 1) for l in range(n_inf)]

    def additive_rmse(source):
        return [rmse_curves(source(l), add_truth[l]) for l in range(n_inf)]

    oracle = fit_model(F, data.X, grid=grid, initial=fit, partition=data.truth, cv=cv)
    out = {
        "replication": replication,
        "rmse_pre": rmse_curves(fit.subject_curves(), data.g0),
        "rmse_oracle": rmse_curves(oracle.refined.subject_curves(), data.g0),
        "rmse_add_pre": additive_rmse(fit.additive_at_subjects),
        "rmse_add_oracle": additive_rmse(oracle.refined.additive_at_subjects),
        "criteria": {},
    }
    for crit in criteria:
        post = fit_model(F, data.X, grid=grid, initial=fit, criterion=crit, cv=cv, k_max=k_max)
        out["criteria"][crit] = {
            "k_hat": post.k,
            "nmi": nmi(post.partition, data.truth),
            "purity": purity(post.partition, data.truth),
            "rmse_post": rmse_curves(post.refined.subject_curves(), data.g0),
            "rmse_add_post": additive_rmse(post.refined.additive_at_subjects),
        }
    return out


def _safe_replication(args):
    config, rep, criteria, cv, k_max = args
    try:
        return run_replication(config, rep, criteria, cv, k_max)
    except Exception as err:  # recorded, not fatal
        log.warning("replication %d failed: %s", rep, err)
        return {"replication": rep, "error": f"{type(err).__name__}: {err}"}


def _mean_sd(values) -> dict:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return {"mean": float("nan"), "sd": float("nan")}
    return {"mean": float(arr.mean()), "sd": float(arr.std(ddof=1)) if arr.size > 1 else 0.0}


@dataclass
class McReport:
    """Aggregated Monte Carlo results for one (n, T) cell."""

    config: DgpConfig
    reps: int
    results: list[dict] = field(repr=False)

    @property
    def ok(self) -> list[dict]:
        return [r for r in self.results if "error" not in r]

    @property
    def failures(self) -> int:
        return self.reps - len(self.ok)

    @property
    def criteria(self) -> list[str]:
        return sorted(self.ok[0]["criteria"]) if self.ok else []

    def k_histogram(self, criterion: str, k_max: int = 8) -> dict[int, int]:
        counts = {k: 0 for k in range(1, k_max + 1)}
        for r in self.ok:
            k = r["criteria"][criterion]["k_hat"]
            counts[k] = counts.get(k, 0) + 1
        return counts

    def k_fraction(self, criterion: str, k: int = 3) -> float:
        return self.k_histogram(criterion)[k] / max(len(self.ok), 1)

    def stat(self, key: str, criterion: str | None = None) -> dict:
        if criterion is None:
            vals = [r[key] for r in self.ok]
        else:
            vals = [r["criteria"][criterion][key] for r in self.ok]
        if vals and isinstance(vals[0], list):
            return [_mean_sd([v[j] for v in vals]) for j in range(len(vals[0]))]
        return _mean_sd(vals)

    def summary(self) -> dict:
        out = {
            "n": self.config.n,
            "T": self.config.T,
            "reps": self.reps,
            "failures": self.failures,
            "rmse_pre": self.stat("rmse_pre"),
            "rmse_oracle": self.stat("rmse_oracle"),
            "rmse_add_pre": self.stat("rmse_add_pre"),
            "rmse_add_oracle": self.stat("rmse_add_oracle"),
            "criteria": {},
        }
        for c in self.criteria:
            out["criteria"][c] = {
                "k_histogram": {str(k): v for k, v in self.k_histogram(c).items()},
                "nmi": self.stat("nmi", c),
                "purity": self.stat("purity", c),
                "rmse_post": self.stat("rmse_post", c),
                "rmse_add_post": self.stat("rmse_add_post", c),
            }
        return out

    def to_json(self) -> str:
        payload = {"config": asdict(self.config), "summary": self.summary(),
                   "replications": self.results}
        return json.dumps(payload, indent=2, sort_keys=True)

    def table1_rows(self, k_cols: int = 5) -> list[list]:
        row = [self.config.n, self.config.T]
        for c in self.criteria:
            hist = self.k_histogram(c)
            row += [hist.get(k, 0) for k in range(1, k_cols + 1)]
            row.append(sum(v for k, v in hist.items() if k > k_cols))
        for c in self.criteria:
            for key in ("nmi", "purity"):
                s = self.stat(key, c)
                row += [f"{s['mean']:.4f}", f"{s['sd']:.4f}"]
        return [row]

    def table1_header(self, k_cols: int = 5) -> list[str]:
        head = ["n", "T"]
        for c in self.criteria:
            head += [f"{c}_k{k}" for k in range(1, k_cols + 1)] + [f"{c}_k>{k_cols}"]
        for c in self.criteria:
            head += [f"{c}_nmi_mean", f"{c}_nmi_sd", f"{c}_purity_mean", f"{c}_purity_sd"]
        return head

    def table2_header(self) -> list[str]:
        head = ["n", "T", "oracle_mean", "oracle_sd", "pre_mean", "pre_sd"]
        for c in self.criteria:
            head += [f"post_{c}_mean", f"post_{c}_sd"]
        return head

    def table2_rows(self) -> list[list]:
        row = [self.config.n, self.config.T]
        for s in (self.stat("rmse_oracle"), self.stat("rmse_pre")):
            row += [f"{s['mean']:.4f}", f"{s['sd']:.4f}"]
        for c in self.criteria:
            s = self.stat("rmse_post", c)
            row += [f"{s['mean']:.4f}", f"{s['sd']:.4f}"]
        return [row]


def write_tables(reports: list[McReport]) -> tuple[str, str]:
    """CSV text of both tables for a list of cells."""
    t1, t2 = io.StringIO(), io.StringIO()
    w1, w2 = csv.writer(t1, lineterminator="\n"), csv.writer(t2, lineterminator="\n")
    if reports:
        w1.writerow(reports[0].table1_header())
        w2.writerow(reports[0].table2_header())
    for rep in reports:
        w1.writerows(rep.table1_rows())
        w2.writerows(rep.table2_rows())
    return t1.getvalue(), t2.getvalue()


def run_mc(
    config: DgpConfig,
    reps: int = 50,
    criteria: tuple[str, ...] = ("gaic", "gbic"),
    cv: bool = True,
    k_max: int = 8,
    n_jobs: int = 1,
) -> McReport:
    """Run ``reps`` replications; failures are recorded in the report."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    jobs = [(config, r, tuple(criteria), cv, k_max) for r in range(reps)]
    if n_jobs == 1:
        results = [_safe_replication(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_safe_replication, jobs))
    return McReport(config, reps, results)
