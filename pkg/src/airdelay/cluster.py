"""Airport clustering: operational features, k-means, and silhouette K-selection.

Airports are grouped by three per-airport features (mean monthly arrivals,
mean delay fraction, mean log arrivals) computed over the filtered panel.
k-means runs on standardized features with k-means++ seeding and
best-of-restarts selection; the cluster count is chosen by mean silhouette
score.  The resulting labels become the spatial grouping of the hierarchical
model, so they are computed once on the full filtered corpus and reused for
epoch-restricted fits.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "AirportFeatures",
    "ClusterAssignment",
    "SelectKResult",
    "DegenerateFeatureError",
    "compute_airport_features",
    "feature_matrix",
    "standardize_features",
    "fit_kmeans",
    "silhouette_values",
    "mean_silhouette",
    "select_k",
    "cluster_profile",
]

MAX_LLOYD_ITERATIONS = 300
DEFAULT_RESTARTS = 10
_SILHOUETTE_TIE = 1e-9


class DegenerateFeatureError(ValueError):
    """A feature dimension has zero variance and cannot be standardized."""


@dataclass(frozen=True)
class AirportFeatures:
    airport: str
    mean_flight: float
    mean_delay: float
    mean_log_flights: float


@dataclass
class ClusterAssignment:
    """A fitted k-means partition over airports.

    ``labels`` maps airport code to cluster id; ``label_array`` carries the
    same labels aligned with the fitted feature rows.  ``silhouette`` is
    filled by select_k (None for a bare fit).  ``wcss_trace`` records the
    within-cluster sum of squares after each Lloyd iteration of the winning
    restart; ``reseeds`` counts empty-cluster recoveries during that restart.
    """

    K: int
    labels: dict[str, int]
    centroids: np.ndarray
    silhouette: float | None
    wcss: float
    label_array: np.ndarray
    wcss_trace: list[float]
    reseeds: int


@dataclass
class SelectKResult:
    best_k: int
    scores: dict[int, float]
    assignment: ClusterAssignment


def compute_airport_features(records) -> list[AirportFeatures]:
    """Per-airport means of volume, delay fraction, and log volume.

    Records with zero arrivals cannot contribute a delay fraction or a log
    volume; they are excluded from those two means with a warning.  (The
    n > 0 parse-time refinement makes this unreachable in the pipeline.)
    """
    by_airport: dict[str, list] = {}
    for r in records:
        by_airport.setdefault(r.airport, []).append(r)
    out = []
    warned = False
    for airport in sorted(by_airport):
        rows = by_airport[airport]
        positive = [r for r in rows if r.arr_flights > 0]
        if len(positive) < len(rows) and not warned:
            warnings.warn(
                "records with zero arrivals excluded from delay and log means",
                stacklevel=2,
            )
            warned = True
        if not positive:
            continue
        out.append(
            AirportFeatures(
                airport=airport,
                mean_flight=sum(r.arr_flights for r in rows) / len(rows),
                mean_delay=sum(r.arr_del15 / r.arr_flights for r in positive) / len(positive),
                mean_log_flights=sum(math.log(r.arr_flights) for r in positive) / len(positive),
            )
        )
    return out


def feature_matrix(features) -> np.ndarray:
    """Stack AirportFeatures into an (n, 3) array in input order."""
    return np.array(
        [[f.mean_flight, f.mean_delay, f.mean_log_flights] for f in features],
        dtype=float,
    )


_FEATURE_NAMES = ("mean_flight", "mean_delay", "mean_log_flights")


def standardize_features(features):
    """Standardize each feature dimension to mean 0 and standard deviation 1.

    Accepts a list of AirportFeatures or a raw (n, d) matrix.  Returns
    (standardized matrix, means, scales).  Raises DegenerateFeatureError for
    any zero-variance dimension, naming it.
    """
    if isinstance(features, np.ndarray):
        X = np.asarray(features, dtype=float)
        names = [f"dim{i}" for i in range(X.shape[1])]
    else:
        X = feature_matrix(features)
        names = list(_FEATURE_NAMES)
    if X.shape[0] < 2:
        raise ValueError("standardization needs at least 2 rows")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    for j, s in enumerate(scale):
        if s <= 0 or not np.isfinite(s):
            raise DegenerateFeatureError(f"feature {names[j]} has zero variance")
    return (X - mean) / scale, mean, scale


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _wcss(X, centroids, labels) -> float:
    return float(((X - centroids[labels]) ** 2).sum())


def _assign(X, centroids) -> np.ndarray:
    d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def _kmeans_pp(X, K, rng) -> np.ndarray:
    """k-means++ seeding: spread initial centroids by squared distance."""
    n = X.shape[0]
    centroids = np.empty((K, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for k in range(1, K):
        total = d2.sum()
        if total <= 0:
            centroids[k] = X[rng.integers(n)]
        else:
            centroids[k] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((X - centroids[k]) ** 2).sum(axis=1))
    return centroids


def _lloyd(X, centroids):
    """Lloyd's iterations to an assignment fixpoint or the iteration cap.

    Empty clusters are re-seeded at the point farthest from its nearest
    centroid, so the returned partition never has an empty cluster.
    """
    K = centroids.shape[0]
    labels = _assign(X, centroids)
    trace: list[float] = []
    reseeds = 0
    for _ in range(MAX_LLOYD_ITERATIONS):
        new_centroids = centroids.copy()
        for k in range(K):
            members = labels == k
            if members.any():
                new_centroids[k] = X[members].mean(axis=0)
        for k in range(K):
            if not (labels == k).any():
                d2 = ((X - new_centroids[labels]) ** 2).sum(axis=1)
                new_centroids[k] = X[int(d2.argmax())]
                reseeds += 1
        new_labels = _assign(X, new_centroids)
        centroids = new_centroids
        trace.append(_wcss(X, centroids, new_labels))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return labels, centroids, trace, reseeds


def fit_kmeans(X, K: int, seed, restarts: int = DEFAULT_RESTARTS, names=None) -> ClusterAssignment:
    """Best-of-restarts k-means on an (n, d) matrix.

    Each restart draws a fresh k-means++ seeding from an independent
    substream of ``seed``; the winner is the (WCSS, restart index) minimum,
    so results are deterministic given the seed.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if K < 2:
        raise ValueError("K must be >= 2")
    if K > n:
        raise ValueError(f"K={K} exceeds number of points {n}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    streams = _seed_sequence(seed).spawn(restarts)
    best = None
    for i, stream in enumerate(streams):
        rng = np.random.Generator(np.random.Philox(stream))
        labels, centroids, trace, reseeds = _lloyd(X, _kmeans_pp(X, K, rng))
        wcss = _wcss(X, centroids, labels)
        if best is None or wcss < best[0]:
            best = (wcss, i, labels, centroids, trace, reseeds)
    wcss, _, labels, centroids, trace, reseeds = best
    if names is None:
        names = [str(i) for i in range(n)]
    return ClusterAssignment(
        K=K,
        labels={name: int(label) for name, label in zip(names, labels)},
        centroids=centroids,
        silhouette=None,
        wcss=wcss,
        label_array=labels,
        wcss_trace=trace,
        reseeds=reseeds,
    )


def silhouette_values(X, labels) -> np.ndarray:
    """Per-point silhouette s(i) = (b - a) / max(a, b), Euclidean distance.

    a(i) is the mean distance to the other members of i's cluster (0 for
    singletons, giving s(i) = 0 by convention); b(i) is the smallest mean
    distance to any other cluster.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    labels = np.asarray(labels)
    n = X.shape[0]
    ks = np.unique(labels)
    if len(ks) < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    if len(ks) >= n:
        raise ValueError("silhouette is ill-defined when every point is its own cluster")
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    s = np.empty(n)
    for i in range(n):
        same = labels == labels[i]
        n_same = same.sum()
        if n_same == 1:
            s[i] = 0.0
            continue
        a = dist[i, same].sum() / (n_same - 1)
        b = min(dist[i, labels == k].mean() for k in ks if k != labels[i])
        s[i] = (b - a) / max(a, b)
    return s


def mean_silhouette(X, labels) -> float:
    return float(silhouette_values(X, labels).mean())


def select_k(X, k_min: int, k_max: int, seed, restarts: int = DEFAULT_RESTARTS, names=None) -> SelectKResult:
    """Fit k-means for each K in [k_min, k_max] and pick the silhouette peak.

    Ties within 1e-9 resolve to the smallest K.  Each K uses its own seed
    substream so adding values to the range never perturbs earlier fits.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if not 2 <= k_min <= k_max <= n - 1:
        raise ValueError(f"need 2 <= k_min <= k_max <= {n - 1}")
    streams = _seed_sequence(seed).spawn(k_max - k_min + 1)
    scores: dict[int, float] = {}
    fits: dict[int, ClusterAssignment] = {}
    for K, stream in zip(range(k_min, k_max + 1), streams):
        assignment = fit_kmeans(X, K, stream, restarts=restarts, names=names)
        assignment.silhouette = mean_silhouette(X, assignment.label_array)
        scores[K] = assignment.silhouette
        fits[K] = assignment
    best_k = k_min
    for K in range(k_min + 1, k_max + 1):
        if scores[K] > scores[best_k] + _SILHOUETTE_TIE:
            best_k = K
    return SelectKResult(best_k=best_k, scores=scores, assignment=fits[best_k])


def cluster_profile(features, assignment: ClusterAssignment):
    """Per-cluster profile rows: size, volume and delay aggregates.

    Reports both the mean of per-airport log volumes and the log of the mean
    volume, since the two differ by the Jensen gap.
    """
    rows = []
    for k in range(assignment.K):
        members = [f for f in features if assignment.labels[f.airport] == k]
        if not members:
            continue
        mean_flight = sum(f.mean_flight for f in members) / len(members)
        rows.append(
            {
                "cluster_id": k,
                "airport_count": len(members),
                "mean_log_flights": sum(f.mean_log_flights for f in members) / len(members),
                "log_mean_flights": math.log(mean_flight),
                "mean_delay_rate": sum(f.mean_delay for f in members) / len(members),
            }
        )
    return rows
