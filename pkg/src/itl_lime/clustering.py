"""K-medoids over the source domain and silhouette-based choice of K.

The update rule is the per-cluster swap: each medoid moves to the member of
its cluster with the smallest summed distance to the other members, then
points are re-assigned. Only ``n x K`` and within-cluster distance blocks
are materialised, so source domains of a few thousand rows stay cheap.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyData, KTooLarge, SingleCluster
from .seeding import derive_seed, make_rng
from .tabular import Metric

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusteringResult:
    medoid_indices: tuple[int, ...]
    assignment: np.ndarray
    total_cost: float
    iterations: int
    cost_history: tuple[float, ...] = field(default=(), compare=False)

    @property
    def k(self) -> int:
        return len(self.medoid_indices)

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == cluster)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)

    def cluster_labels(self, labels: np.ndarray) -> np.ndarray:
        """Majority ground-truth label per cluster; ties go to 0."""
        out = np.zeros(self.k, dtype=np.int64)
        for c in range(self.k):
            lab = labels[self.assignment == c]
            out[c] = int(lab.sum() * 2 > lab.size)
        return out

    def to_json(self) -> str:
        return json.dumps({
            "medoids": [int(m) for m in self.medoid_indices],
            "assignment": [int(a) for a in self.assignment],
            "cost": float(self.total_cost),
            "k": self.k,
        })

    @classmethod
    def from_json(cls, text: str) -> "ClusteringResult":
        obj = json.loads(text)
        return cls(tuple(obj["medoids"]), np.array(obj["assignment"], dtype=np.int64),
                   float(obj["cost"]), 0)


def _assign(X, medoids, metric):
    D = metric.pairwise(X, X[list(medoids)])
    # argmin returns the first minimum, i.e. the lowest medoid index on ties
    assignment = np.argmin(D, axis=1)
    # duplicate rows can pull a medoid into another cluster at distance 0
    for k, m in enumerate(medoids):
        assignment[m] = k
    return assignment, D[np.arange(X.shape[0]), assignment]


def objective(dists_to_assigned: np.ndarray) -> float:
    """Total within-cluster dissimilarity, summed in row order."""
    return float(np.sum(dists_to_assigned))


def kmedoids(data, K: int, metric: Metric | None = None, seed: int = 0,
             max_iters: int = 100, init=None) -> ClusteringResult:
    """Alternate nearest-medoid assignment and per-cluster medoid swaps.

    ``init`` overrides the seeded random initial medoids (used by the
    exhaustive oracle tests).
    """
    X = np.asarray(getattr(data, "values", data), dtype=np.float64)
    metric = metric or Metric("euclidean")
    n = X.shape[0]
    if n == 0:
        raise EmptyData("no rows to cluster")
    if K < 1 or K > n:
        raise KTooLarge(f"K={K} but only {n} rows")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")

    if init is None:
        medoids = [int(i) for i in make_rng(seed).choice(n, size=K, replace=False)]
    else:
        medoids = [int(i) for i in init]
        if len(set(medoids)) != K:
            raise ValueError("init must hold K distinct indices")

    assignment, dist = _assign(X, medoids, metric)
    history = [objective(dist)]
    iterations = 0
    for iterations in range(1, max_iters + 1):
        new = list(medoids)
        for k in range(K):
            members = np.flatnonzero(assignment == k)
            if members.size == 0:
                continue
            within = metric.pairwise(X[members], X[members]).sum(axis=1)
            best = members[int(np.argmin(within))]
            # keep the incumbent on ties so convergence is well defined
            cur = int(np.flatnonzero(members == medoids[k])[0])
            if within[cur] > within.min():
                new[k] = int(best)
        changed = new != medoids
        medoids = new
        assignment, dist = _assign(X, medoids, metric)
        history.append(objective(dist))
        if not changed:
            break
    return ClusteringResult(tuple(medoids), assignment, history[-1], iterations, tuple(history))


def best_of_restarts(data, K: int, metric: Metric | None = None, seed: int = 0,
                     restarts: int = 10, max_iters: int = 100) -> ClusteringResult:
    """Run ``restarts`` seeded k-medoids and keep the lowest-cost result.

    Ties in cost keep the earliest restart.
    """
    best = None
    for r in range(restarts):
        res = kmedoids(data, K, metric, derive_seed(seed, "kmedoids", K, r), max_iters)
        if best is None or res.total_cost < best.total_cost:
            best = res
    return best


def silhouette(data, result: ClusteringResult, metric: Metric | None = None,
               chunk: int = 512) -> float:
    X = np.asarray(getattr(data, "values", data), dtype=np.float64)
    metric = metric or Metric("euclidean")
    K = result.k
    if K < 2:
        raise SingleCluster("silhouette needs at least two clusters")
    labels = np.asarray(result.assignment)
    sizes = np.bincount(labels, minlength=K).astype(np.float64)
    onehot = np.zeros((X.shape[0], K))
    onehot[np.arange(X.shape[0]), labels] = 1.0
    scores = np.zeros(X.shape[0])
    for lo in range(0, X.shape[0], chunk):
        hi = min(lo + chunk, X.shape[0])
        sums = metric.pairwise(X[lo:hi], X) @ onehot  # (chunk, K)
        own = labels[lo:hi]
        own_size = sizes[own]
        a = np.where(own_size > 1, sums[np.arange(hi - lo), own] / np.maximum(own_size - 1, 1), 0.0)
        means = sums / np.maximum(sizes, 1)
        means[np.arange(hi - lo), own] = np.inf
        means[:, sizes == 0] = np.inf
        b = means.min(axis=1)
        denom = np.maximum(a, b)
        s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
        scores[lo:hi] = np.where(own_size > 1, s, 0.0)
    return float(scores.mean())


def choose_k(data, candidates, metric: Metric | None = None, seed: int = 0,
             restarts: int = 10, max_iters: int = 100):
    """Pick the candidate K with the highest silhouette (ties -> smaller K).

    Returns ``(K, {K: silhouette})``.
    """
    candidates = sorted(set(int(k) for k in candidates))
    if not candidates:
        raise ValueError("no candidate K values")
    if candidates[0] < 2:
        raise SingleCluster("candidate K values must be >= 2")
    scores = {}
    for k in candidates:
        res = best_of_restarts(data, k, metric, seed, restarts, max_iters)
        scores[k] = silhouette(data, res, metric)
        log.debug("K=%d silhouette=%.4f", k, scores[k])
    best = max(candidates, key=lambda k: (scores[k], -k))
    return best, scores
