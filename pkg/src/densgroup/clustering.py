"""Curve distances, complete-linkage agglomerative clustering, selection of
the group count, and partition agreement metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import DensGroupError, InvalidKError, PartitionMismatchError

__all__ = [
    "Partition",
    "IcTrace",
    "distance_matrix",
    "curve_distance",
    "hac_merges",
    "hac",
    "hac_path",
    "information_penalty",
    "select_k",
    "nmi",
    "purity",
]


@dataclass(frozen=True)
class Partition:
    """Assignment of subjects ``0..n-1`` to groups labelled ``1..K``.

    Labels are canonical: groups are numbered in order of their smallest
    member, so two equal partitions compare equal regardless of the labels
    they were built from.
    """

    labels: NDArray[np.int64] = field(repr=False)

    def __post_init__(self):
        raw = np.asarray(self.labels).ravel()
        if raw.size == 0:
            raise ValueError("partition of zero subjects")
        _, first, inverse = np.unique(raw, return_index=True, return_inverse=True)
        rank = np.empty(first.size, dtype=np.int64)
        rank[np.argsort(first)] = np.arange(1, first.size + 1)
        canon = rank[inverse]
        canon.setflags(write=False)
        object.__setattr__(self, "labels", canon)

    @classmethod
    def from_groups(cls, groups: Sequence[Sequence[int]], n: int | None = None) -> "Partition":
        n = n if n is not None else sum(len(g) for g in groups)
        labels = np.zeros(n, dtype=np.int64)
        for k, members in enumerate(groups, start=1):
            labels[list(members)] = k
        if np.any(labels == 0):
            raise ValueError("groups do not cover every subject")
        return cls(labels)

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def k(self) -> int:
        return int(self.labels.max())

    @property
    def groups(self) -> list[NDArray[np.int64]]:
        return [np.flatnonzero(self.labels == g) for g in range(1, self.k + 1)]

    @property
    def sizes(self) -> NDArray[np.int64]:
        return np.bincount(self.labels, minlength=self.k + 1)[1:]

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.n == other.n and bool(np.array_equal(self.labels, other.labels))

    def __hash__(self):
        return hash(self.labels.tobytes())

    def to_csv(self, subject_ids: Sequence | None = None) -> str:
        ids = range(1, self.n + 1) if subject_ids is None else subject_ids
        rows = ["subject_id,group_label"]
        rows += [f"{sid},{lab}" for sid, lab in zip(ids, self.labels)]
        return "\n".join(rows) + "\n"


# --------------------------------------------------------------------------
# distances
# --------------------------------------------------------------------------

def distance_matrix(curves: ArrayLike, q_norm: float = 2) -> NDArray[np.float64]:
    """Pairwise grid-averaged distances between rows of ``curves``.

    For scalar curve values the pointwise q-norm is ``|difference|`` for any
    finite q, so q = 1 and q = 2 both average absolute differences over the
    grid; ``q_norm=np.inf`` takes the maximum instead.
    """
    c = np.asarray(curves, dtype=float)
    if q_norm not in (1, 2, np.inf):
        raise ValueError("q_norm must be 1, 2 or inf")
    diff = np.abs(c[:, None, :] - c[None, :, :])
    d = diff.max(axis=2) if q_norm == np.inf else diff.mean(axis=2)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def curve_distance(fit, i: int, j: int, q_norm: float = 2) -> float:
    """Distance between the fitted subject curves of subjects ``i`` and ``j``."""
    curves = fit.subject_curves() if hasattr(fit, "subject_curves") else np.asarray(fit)
    diff = np.abs(curves[i] - curves[j])
    return float(diff.max() if q_norm == np.inf else diff.mean())


# --------------------------------------------------------------------------
# complete-linkage HAC
# --------------------------------------------------------------------------

def hac_merges(D: ArrayLike) -> list[tuple[int, int, float]]:
    """Full complete-linkage merge sequence.

    Each cluster is identified by its smallest member.  Every step merges
    the pair ``(a, b)``, ``a < b``, with the smallest linkage distance;
    exact ties go to the lexicographically smallest pair.
    """
    D = np.asarray(D, dtype=float)
    n = D.shape[0]
    if D.shape != (n, n):
        raise ValueError("distance matrix must be square")
    link = D.copy()
    link[np.tril_indices(n)] = np.inf
    full = np.maximum(D, D.T)
    active = np.ones(n, dtype=bool)
    merges = []
    for _ in range(n - 1):
        flat = int(np.argmin(link))
        a, b = divmod(flat, n)
        merges.append((a, b, float(link[a, b])))
        # complete linkage: distance to the merged cluster is the larger one
        full[a, :] = np.maximum(full[a, :], full[b, :])
        full[:, a] = full[a, :]
        active[b] = False
        full[b, :] = np.inf
        full[:, b] = np.inf
        row = np.where(np.arange(n) > a, full[a, :], np.inf)
        col = np.where(np.arange(n) < a, full[:, a], np.inf)
        link[a, :] = np.where(active, row, np.inf)
        link[:, a] = np.where(active, col, np.inf)
        link[b, :] = np.inf
        link[:, b] = np.inf
    return merges


def _cut(n: int, merges: Sequence[tuple[int, int, float]], k: int) -> Partition:
    parent = np.arange(n)
    for a, b, _ in merges[: n - k]:
        parent[parent == b] = a
    return Partition(parent)


def hac(D: ArrayLike, k: int) -> Partition:
    """Complete-linkage partition of the subjects into ``k`` groups."""
    n = np.asarray(D).shape[0]
    if not 1 <= k <= n:
        raise InvalidKError(f"k must be in [1, {n}], got {k}")
    return _cut(n, hac_merges(D), k)


def hac_path(D: ArrayLike, k_values: Sequence[int]) -> dict[int, Partition]:
    """Partitions for several group counts from one merge sequence."""
    n = np.asarray(D).shape[0]
    merges = hac_merges(D)
    out = {}
    for k in k_values:
        if not 1 <= k <= n:
            raise InvalidKError(f"k must be in [1, {n}], got {k}")
        out[k] = _cut(n, merges, k)
    return out


# --------------------------------------------------------------------------
# group-count selection
# --------------------------------------------------------------------------

@dataclass
class IcTrace:
    """Information-criterion values over candidate group counts."""

    criterion: str
    records: list[dict] = field(default_factory=list)
    k_hat: int = 1
    partitions: dict[int, Partition] = field(default_factory=dict, repr=False)

    def to_json(self) -> str:
        payload = {
            "criterion": self.criterion,
            "k_hat": self.k_hat,
            "records": [
                {key: rec[key] for key in ("k", "vn2", "penalty", "ic")}
                for rec in self.records
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def information_penalty(criterion: str, min_group: int, n_points: int, h: float) -> float:
    """Per-group penalty: ``log(m)/m`` (GBIC) or ``2/m`` (GAIC), ``m = n_K T h``."""
    m = min_group * n_points * h
    criterion = criterion.lower()
    if criterion == "gbic":
        return float(np.log(m) / m)
    if criterion == "gaic":
        return float(2.0 / m)
    raise ValueError(f"unknown criterion {criterion!r}")


def select_k(
    residuals: ArrayLike,
    distances: ArrayLike,
    refine: Callable[[NDArray, Partition], NDArray],
    k_max: int = 8,
    criterion: str = "gbic",
    h: float = 0.15,
    partitions: dict[int, Partition] | None = None,
) -> IcTrace:
    """Choose the group count minimizing ``log V^2(K) + K * rho``.

    Parameters
    ----------
    residuals : (n, T) array
        Subject curves with the additive components removed.
    distances : (n, n) array
        Distances used by HAC.
    refine : callable
        ``refine(residuals, partition)`` returning the ``(K, T)`` group
        curves on the same grid.
    h : float
        Bandwidth entering the penalty.
    partitions : dict, optional
        Precomputed HAC partitions keyed by K.
    """
    R = np.asarray(residuals, dtype=float)
    n, T = R.shape
    k_max = min(k_max, n)
    if k_max < 1:
        raise InvalidKError("k_max must be at least 1")
    if partitions is None:
        partitions = hac_path(distances, range(1, k_max + 1))
    trace = IcTrace(criterion.lower(), partitions=partitions)
    best = None
    for k in range(1, k_max + 1):
        part = partitions[k]
        if np.any(part.sizes == 0):
            raise DensGroupError("empty estimated group")
        curves = np.asarray(refine(R, part))
        vn2 = float(np.mean((R - curves[part.labels - 1]) ** 2))
        rho = information_penalty(criterion, int(part.sizes.min()), T, h)
        ic = float(np.log(vn2) + k * rho)
        trace.records.append({"k": k, "vn2": vn2, "penalty": k * rho, "ic": ic})
        if best is None or ic < best[1]:
            best = (k, ic)
    trace.k_hat = best[0]
    return trace


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def _contingency(a: Partition, b: Partition) -> NDArray[np.float64]:
    if a.n != b.n:
        raise PartitionMismatchError(f"partitions of {a.n} and {b.n} subjects")
    table = np.zeros((a.k, b.k))
    np.add.at(table, (a.labels - 1, b.labels - 1), 1.0)
    return table


def _entropy(p: NDArray) -> float:
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def nmi(a: Partition, b: Partition) -> float:
    """Normalized mutual information, arithmetic-mean normalization, base 2.

    Two single-group partitions have NMI 1 by convention.
    """
    table = _contingency(a, b) / a.n
    pa, pb = table.sum(axis=1), table.sum(axis=0)
    ha, hb = _entropy(pa), _entropy(pb)
    if ha + hb == 0.0:
        return 1.0
    nz = table > 0
    mi = float((table[nz] * np.log2(table[nz] / np.outer(pa, pb)[nz])).sum())
    return float(np.clip(mi / (0.5 * (ha + hb)), 0.0, 1.0))


def purity(est: Partition, truth: Partition) -> float:
    """Share of subjects falling in the majority true group of their cluster."""
    table = _contingency(est, truth)
    return float(table.max(axis=1).sum() / est.n)
