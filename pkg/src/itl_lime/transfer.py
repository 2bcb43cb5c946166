"""Build the unified neighbourhood of an explained instance.

Source rows come from the label-consistent nearest medoid's cluster; target
rows are the k nearest target instances, with k tied to the cluster size
through the source:target ratio.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import ClusteringResult
from .errors import DataError, KTooLarge, NoClusters
from .tabular import Dataset, Metric

SOURCE = "source"
TARGET = "target"


@dataclass(frozen=True)
class XiRatio:
    """Source:target size ratio, e.g. ``XiRatio(1, 0.5)`` for 1:0.5."""

    source_part: float = 1.0
    target_part: float = 0.5

    def __post_init__(self):
        if not (self.source_part > 0 and self.target_part > 0):
            raise ValueError("both parts of the ratio must be positive")

    @classmethod
    def parse(cls, text) -> "XiRatio":
        if isinstance(text, XiRatio):
            return text
        if isinstance(text, (list, tuple)):
            return cls(float(text[0]), float(text[1]))
        a, b = str(text).split(":")
        return cls(float(a), float(b))

    def __str__(self):
        return f"{self.source_part:g}:{self.target_part:g}"


@dataclass(frozen=True)
class CentroidChoice:
    cluster: int
    medoid_distance: float
    fallback: bool


@dataclass(frozen=True)
class UnifiedNeighborhood:
    instances: np.ndarray  # encoded rows
    origins: tuple[str, ...]
    source_cluster_id: int
    target_neighbor_indices: tuple[int, ...]
    source_indices: tuple[int, ...] = ()
    raw: Dataset | None = field(default=None, compare=False, repr=False)
    weights: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.origins) != self.instances.shape[0]:
            raise DataError("origins must tag every instance")
        if self.weights is not None and len(self.weights) != self.instances.shape[0]:
            raise DataError("weights must cover every instance")

    def __len__(self):
        return self.instances.shape[0]

    @property
    def origin_array(self) -> np.ndarray:
        return np.array(self.origins)

    def with_weights(self, weights) -> "UnifiedNeighborhood":
        return replace(self, weights=np.asarray(weights, dtype=np.float64))

    def only(self, origin: str) -> "UnifiedNeighborhood":
        """Restrict to rows of one origin (used by the no-transfer ablation)."""
        keep = np.flatnonzero(self.origin_array == origin)
        raw = None if self.raw is None else self.raw.subset(keep)
        return UnifiedNeighborhood(
            self.instances[keep],
            tuple(self.origins[i] for i in keep),
            self.source_cluster_id,
            self.target_neighbor_indices if origin == TARGET else (),
            self.source_indices if origin == SOURCE else (),
            raw,
            None if self.weights is None else self.weights[keep],
            dict(self.diagnostics),
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.instances).tobytes())
        h.update(",".join(self.origins).encode())
        return h.hexdigest()


def select_centroid(x_t, clustering: ClusteringResult, source_X: np.ndarray,
                    source_labels: np.ndarray, predicted_label: int,
                    metric: Metric | None = None) -> CentroidChoice:
    """Nearest medoid among clusters whose majority label matches ``predicted_label``."""
    metric = metric or Metric("euclidean")
    if clustering.k == 0:
        raise NoClusters("clustering has no medoids")
    if source_labels is None:
        raise DataError("source labels are needed for label-consistent selection")
    medoids = np.asarray(source_X)[list(clustering.medoid_indices)]
    d = metric.to_point(x_t, medoids)
    labels = clustering.cluster_labels(np.asarray(source_labels))
    ok = np.flatnonzero(labels == int(predicted_label))
    if ok.size:
        best = int(ok[np.argmin(d[ok])])
        return CentroidChoice(best, float(d[best]), False)
    best = int(np.argmin(d))
    return CentroidChoice(best, float(d[best]), True)


def target_neighbors(x_t, target_X: np.ndarray, k: int, metric: Metric | None = None,
                     exclude: int | None = None) -> np.ndarray:
    """Indices of the ``k`` nearest target rows, ascending distance, ties to lower index."""
    metric = metric or Metric("euclidean")
    n_t = target_X.shape[0]
    candidates = np.arange(n_t)
    if exclude is not None:
        candidates = candidates[candidates != exclude]
    if k < 1 or k > candidates.size:
        raise KTooLarge(f"k={k} but only {candidates.size} candidate target rows")
    d = metric.to_point(x_t, target_X[candidates])
    order = np.lexsort((candidates, d))
    return candidates[order[:k]]


def neighborhood_size(cluster_size: int, xi: XiRatio, n_t: int) -> int:
    if cluster_size < 1:
        raise ValueError("cluster_size must be >= 1")
    # Python's round() is round-half-to-even
    k = round(cluster_size * xi.target_part / xi.source_part)
    return int(min(max(k, 1), max(n_t - 1, 1)))


def build_unified(x_t, clustering: ClusteringResult, source: Dataset, source_X: np.ndarray,
                  target: Dataset, target_X: np.ndarray, predicted_label: int,
                  xi: XiRatio, metric: Metric | None = None,
                  exclude_target: int | None = None,
                  include_source: bool = True) -> UnifiedNeighborhood:
    """Compose centroid selection, cluster retrieval and target KNN.

    With ``include_source=False`` the target neighbourhood keeps the size the
    full pipeline would use but no source rows are added.
    """
    metric = metric or Metric("euclidean")
    if target_X.shape[0] == 0:
        raise DataError("target domain is empty")
    choice = select_centroid(x_t, clustering, source_X, source.labels, predicted_label, metric)
    members = clustering.members(choice.cluster)
    k = neighborhood_size(members.size, xi, target_X.shape[0])
    tgt = target_neighbors(x_t, target_X, k, metric, exclude_target)
    src = members if include_source else members[:0]
    instances = np.concatenate([source_X[src], target_X[tgt]], axis=0)
    origins = (SOURCE,) * src.size + (TARGET,) * tgt.size
    raw = Dataset.concat([source.subset(src), target.subset(tgt)])
    diag = {
        "cluster_id": choice.cluster,
        "medoid_distance": choice.medoid_distance,
        "fallback": choice.fallback,
        "n_source": int(src.size),
        "n_target": int(tgt.size),
    }
    return UnifiedNeighborhood(instances, origins, choice.cluster, tuple(int(i) for i in tgt),
                               tuple(int(i) for i in src), raw, None, diag)
