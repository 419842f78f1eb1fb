"""Scenario reduction for daily capacity-factor profiles.

A year of daily profiles is clustered into a small set of representative days.
Each calendar month then receives its own probability vector over those
representative days, obtained from a mass-transportation problem between the
month's empirical day distribution and the reduced support. The module also
computes the deviation statistics that parameterize the uncertainty set used
by the robust model builders, and can extend a reduced set to multi-day
scenarios by taking products.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .domain import HOURS, MONTHS, CapacityFactorDataset

DEFAULT_RESTARTS = 20
DEFAULT_MAX_ITER = 300
REL_TOL = 1e-8
EXTEND_CAP = 1000


class EmptyMonthError(ValueError):
    """A calendar month has no days in the dataset."""


class SizeLimitError(ValueError):
    """Extending the scenario set would exceed the size cap."""


@dataclass
class ReducedScenarioSet:
    """Representative days with monthly weights.

    centroids has shape (D, hours, n_mining) where hours is 24 for plain sets
    and 24 * day_multiplier for extended ones. weights has shape (D, 12) and
    each column is a probability vector. For plain sets, assignment maps each
    dataset day to its nearest centroid and transport[m] holds the optimal
    mass-transport matrix of month m+1, shape (D, number of days in month).
    Extended sets carry neither.

    Monthly weights are shared across years. year_weights is an optional
    (D, 12, Y) override for pipelines that estimate per-year weights; nothing
    in this package populates it.
    """

    centroids: np.ndarray
    weights: np.ndarray
    assignment: np.ndarray | None = None
    transport: list[np.ndarray] | None = None
    transport_cost: np.ndarray | None = None
    day_multiplier: int = 1
    site_names: list[str] | None = None
    year_weights: np.ndarray | None = None

    @property
    def n_scenarios(self) -> int:
        return self.centroids.shape[0]

    @property
    def hours(self) -> int:
        return self.centroids.shape[1]

    @property
    def n_sites(self) -> int:
        return self.centroids.shape[2]

    def to_document(self) -> dict:
        doc = {
            "centroids": self.centroids.tolist(),
            "weights": self.weights.tolist(),
            "day_multiplier": self.day_multiplier,
        }
        if self.assignment is not None:
            doc["assignment"] = self.assignment.tolist()
        if self.transport is not None:
            doc["transport"] = [w.tolist() for w in self.transport]
        if self.transport_cost is not None:
            doc["transport_cost"] = self.transport_cost.tolist()
        if self.site_names is not None:
            doc["site_names"] = self.site_names
        return doc

    @staticmethod
    def from_document(doc: dict) -> "ReducedScenarioSet":
        return ReducedScenarioSet(
            centroids=np.asarray(doc["centroids"], dtype=float),
            weights=np.asarray(doc["weights"], dtype=float),
            assignment=(np.asarray(doc["assignment"], dtype=int)
                        if "assignment" in doc else None),
            transport=([np.asarray(w, dtype=float) for w in doc["transport"]]
                       if "transport" in doc else None),
            transport_cost=(np.asarray(doc["transport_cost"], dtype=float)
                            if "transport_cost" in doc else None),
            day_multiplier=int(doc.get("day_multiplier", 1)),
            site_names=doc.get("site_names"),
        )


@dataclass
class UncertaintyStatistics:
    """Raw deviation statistics per (hour, scenario), before any scaling.

    max_dev[h, d] is the largest absolute deviation of an assigned day from
    its centroid at hour h, over all mining sites. smooth_dev[h, d] bounds the
    hour-to-hour change of that deviation (hour 1 pairs with hour 24).
    daily_sigma[d] is the corrected sample standard deviation of the daily
    deviation sums of the cluster, one sample per (assigned day, site).
    """

    max_dev: np.ndarray
    smooth_dev: np.ndarray
    daily_sigma: np.ndarray

    def to_document(self) -> dict:
        return {
            "max_dev": self.max_dev.tolist(),
            "smooth_dev": self.smooth_dev.tolist(),
            "daily_sigma": self.daily_sigma.tolist(),
        }

    @staticmethod
    def from_document(doc: dict) -> "UncertaintyStatistics":
        return UncertaintyStatistics(
            max_dev=np.asarray(doc["max_dev"], dtype=float),
            smooth_dev=np.asarray(doc["smooth_dev"], dtype=float),
            daily_sigma=np.asarray(doc["daily_sigma"], dtype=float),
        )


# --------------------------------------------------------------------------
# k-means
# --------------------------------------------------------------------------

def _seed_centers(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: sample each next center proportionally to squared
    distance from the existing ones."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = points[rng.integers(n)]
            continue
        centers[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def _lloyd(points: np.ndarray, centers: np.ndarray,
           max_iter: int = DEFAULT_MAX_ITER) -> tuple[np.ndarray, np.ndarray, float]:
    """Lloyd iterations until the relative objective change drops below
    REL_TOL. Ties in assignment go to the lowest center index; a center left
    without members keeps its position."""
    n = points.shape[0]
    prev = np.inf
    for _ in range(max_iter):
        d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        assign = np.argmin(d2, axis=1)
        obj = float(d2[np.arange(n), assign].sum())
        new = centers.copy()
        for j in range(centers.shape[0]):
            members = points[assign == j]
            if len(members):
                new[j] = members.mean(axis=0)
        if prev - obj <= REL_TOL * max(abs(prev), 1.0):
            return centers, assign, obj
        centers, prev = new, obj
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    assign = np.argmin(d2, axis=1)
    return centers, assign, float(d2[np.arange(n), assign].sum())


def _kmeans(points: np.ndarray, k: int, seed: int,
            restarts: int = DEFAULT_RESTARTS) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        centers, assign, obj = _lloyd(points, _seed_centers(points, k, rng))
        if best is None or obj < best[2] - 1e-12:
            best = (centers, assign, obj)
    return best[0], best[1]


def nearest_scenario(centroids_flat: np.ndarray, day_vector: np.ndarray) -> int:
    """Index of the closest centroid in squared Euclidean distance, ties to
    the lowest index. Independent of the transport solve; used as an oracle
    because the fixed-centroid transport problem decomposes per day."""
    d2 = np.sum((centroids_flat - day_vector[None, :]) ** 2, axis=1)
    return int(np.argmin(d2))


# --------------------------------------------------------------------------
# reduction
# --------------------------------------------------------------------------

def reduce_scenarios(dataset: CapacityFactorDataset, k: int,
                     seed: int = 0, restarts: int = DEFAULT_RESTARTS) -> ReducedScenarioSet:
    """Cluster the dataset's days into k representative days and compute
    monthly weights by mass transportation.

    Centroids are ordered by decreasing mean capacity factor. Raises
    EmptyMonthError if any calendar month has no days; if the dataset has
    fewer distinct days than k, the effective count is lowered with a
    warning.
    """
    if k < 1:
        raise ValueError("scenario count must be at least 1")
    if dataset.n_days < k:
        raise ValueError(f"dataset has {dataset.n_days} days, fewer than k={k}")
    for m in range(1, MONTHS + 1):
        if len(dataset.month_days(m)) == 0:
            raise EmptyMonthError(f"month {m} has no days in the dataset")

    points = dataset.day_vectors()
    n_distinct = np.unique(points, axis=0).shape[0]
    if n_distinct < k:
        warnings.warn(
            f"only {n_distinct} distinct day profiles; reducing k from {k}",
            stacklevel=2,
        )
        k = n_distinct

    centers, _ = _kmeans(points, k, seed, restarts)

    order = np.argsort(-centers.mean(axis=1), kind="stable")
    centers = centers[order]

    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    assign = np.argmin(d2, axis=1)

    n_mining = dataset.values.shape[2]
    centroids = centers.reshape(k, HOURS, n_mining)

    weights = np.zeros((k, MONTHS))
    transport, transport_cost = [], np.zeros(MONTHS)
    for m in range(1, MONTHS + 1):
        days = dataset.month_days(m)
        w, cost = _transport_month(d2[days])
        transport.append(w)
        transport_cost[m - 1] = cost
        weights[:, m - 1] = w.mean(axis=1)

    return ReducedScenarioSet(
        centroids=centroids,
        weights=weights,
        assignment=assign,
        transport=transport,
        transport_cost=transport_cost,
        site_names=list(dataset.site_names),
    )


def _transport_month(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve one month's mass-transport problem with fixed centroids.

    cost[i, d] is the squared distance from the month's i-th day to centroid
    d. Variables are the transport entries W[d, i] with each day shipping
    unit mass; returns (W, objective).
    """
    n_days, k = cost.shape
    c = cost.T.reshape(-1)  # variable order: (d, i)
    a_eq = np.zeros((n_days, k * n_days))
    for i in range(n_days):
        a_eq[i, i::n_days] = 1.0
    res = linprog(c, A_eq=a_eq, b_eq=np.ones(n_days), bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport problem failed: {res.message}")
    return res.x.reshape(k, n_days), float(res.fun)


# --------------------------------------------------------------------------
# uncertainty statistics
# --------------------------------------------------------------------------

def compute_uncertainty_statistics(dataset: CapacityFactorDataset,
                                   scenarios: ReducedScenarioSet) -> UncertaintyStatistics:
    """Deviation statistics of each cluster, taken over assigned days and all
    mining sites.

    For each (hour, scenario): the maximum absolute deviation from the
    centroid, and the maximum absolute hour-to-hour change of that deviation
    with hour 1 wrapping to hour 24. daily_sigma is the corrected sample
    standard deviation of the per-(day, site) sums of hourly deviations; a
    cluster with a single sample gets sigma 0 with a warning.
    """
    if scenarios.assignment is None:
        raise ValueError("scenario set carries no assignment map")
    if scenarios.day_multiplier != 1:
        raise ValueError("statistics are defined on single-day scenario sets")

    k = scenarios.n_scenarios
    max_dev = np.zeros((HOURS, k))
    smooth_dev = np.zeros((HOURS, k))
    daily_sigma = np.zeros(k)

    for d in range(k):
        members = np.flatnonzero(scenarios.assignment == d)
        if len(members) == 0:
            warnings.warn(f"scenario {d} has no assigned days; statistics set to 0",
                          stacklevel=2)
            continue
        dev = dataset.values[members] - scenarios.centroids[d][None, :, :]
        max_dev[:, d] = np.abs(dev).max(axis=(0, 2))
        delta = dev - np.roll(dev, 1, axis=1)
        smooth_dev[:, d] = np.abs(delta).max(axis=(0, 2))
        sums = dev.sum(axis=1).reshape(-1)  # one sample per (day, site)
        if sums.size < 2:
            warnings.warn(f"scenario {d} has a single deviation sample; sigma set to 0",
                          stacklevel=2)
        else:
            daily_sigma[d] = float(np.std(sums, ddof=1))

    return UncertaintyStatistics(max_dev=max_dev, smooth_dev=smooth_dev,
                                 daily_sigma=daily_sigma)


# --------------------------------------------------------------------------
# multi-day extension
# --------------------------------------------------------------------------

def extend_scenarios(scenarios: ReducedScenarioSet, length: int,
                     cap: int = EXTEND_CAP) -> ReducedScenarioSet:
    """Product scenarios of `length` consecutive days.

    Each sequence (d_1, .., d_L) becomes one scenario of 24 * L hours whose
    monthly weight is the product of the member weights. Sequences are
    ordered lexicographically.
    """
    if length not in (2, 3):
        raise ValueError("extension length must be 2 or 3")
    if scenarios.day_multiplier != 1:
        raise ValueError("scenario set is already extended")
    k = scenarios.n_scenarios
    total = k ** length
    if total > cap:
        raise SizeLimitError(f"{k}^{length} = {total} scenarios exceeds cap {cap}")

    seqs = list(itertools.product(range(k), repeat=length))
    centroids = np.stack(
        [np.concatenate([scenarios.centroids[d] for d in seq], axis=0) for seq in seqs]
    )
    weights = np.ones((total, MONTHS))
    for j, seq in enumerate(seqs):
        for d in seq:
            weights[j] *= scenarios.weights[d]

    return ReducedScenarioSet(
        centroids=centroids,
        weights=weights,
        day_multiplier=length,
        site_names=scenarios.site_names,
    )
