"""Attribute-guided generation: one model per attribute cluster, queries routed by cosine distance."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError
from .kmeans import kmeans, sq_distances
from .pipeline import GenerationResult, PagerConfig, PagerModel, generate, train

log = logging.getLogger(__name__)

# distances closer than this to the minimum count as tied (keeps routing scale-invariant)
TIE_TOL = 1e-12


class SmallAttributeClusterWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AttributeRouter:
    centers: np.ndarray  # (K_attr, T)
    model_ids: tuple[str, ...] = ()

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] == 0:
            raise InvalidInputError("centers must be a non-empty K x T matrix")
        if not np.all(np.isfinite(c)):
            raise InvalidInputError("centers must be finite")
        object.__setattr__(self, "centers", c)
        if not self.model_ids:
            object.__setattr__(self, "model_ids", tuple(f"cluster{j}" for j in range(c.shape[0])))
        if len(self.model_ids) != c.shape[0]:
            raise InvalidInputError(f"{len(self.model_ids)} model ids for {c.shape[0]} centers")

    @property
    def K(self) -> int:
        return self.centers.shape[0]

    @property
    def T(self) -> int:
        return self.centers.shape[1]


@dataclass(frozen=True)
class AttributeClustering:
    router: AttributeRouter
    labels: np.ndarray
    inertia_history: list[float] = field(default_factory=list)


def cluster_attributes(attr_matrix, K_attr: int, seed: int = 0, max_iter: int = 50) -> AttributeClustering:
    """k-means (k-means++ start, at most ``max_iter`` Lloyd iterations) over +/-1 attribute rows."""
    a = np.asarray(attr_matrix, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInputError("attribute matrix must be M x T")
    if K_attr < 1 or a.shape[0] < K_attr:
        raise InvalidInputError(f"need at least K_attr={K_attr} rows, got {a.shape[0]}")
    res = kmeans(a, K_attr, seed=seed, max_iter=max_iter)
    return AttributeClustering(AttributeRouter(res.centers), res.labels, res.inertia_history)


def cosine_distances(router: AttributeRouter, q) -> np.ndarray:
    """``1 - q.c / (|q||c|)`` per center; a zero-norm center is at distance 1."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (router.T,):
        raise InvalidInputError(f"query must have {router.T} entries, got shape {q.shape}")
    qn = np.sqrt(q @ q)
    if qn == 0:
        raise InvalidInputError("query has no nonzero entry")
    cn = np.sqrt((router.centers ** 2).sum(1))
    d = np.ones(router.K)
    ok = cn > 0
    d[ok] = 1.0 - (router.centers[ok] @ q) / (qn * cn[ok])
    return d


def route(router: AttributeRouter, q) -> int:
    """Index of the nearest center by cosine distance; ties go to the lowest index."""
    d = cosine_distances(router, q)
    return int(np.flatnonzero(d <= d.min() + TIE_TOL)[0])


def route_all(router: AttributeRouter, queries) -> np.ndarray:
    """``route`` for every row of ``queries``."""
    q = np.asarray(queries, dtype=np.float64)
    qn = np.sqrt((q ** 2).sum(1))
    if np.any(qn == 0):
        raise InvalidInputError("every query needs a nonzero entry")
    cn = np.sqrt((router.centers ** 2).sum(1))
    d = np.ones((q.shape[0], router.K))
    ok = cn > 0
    d[:, ok] = 1.0 - (q @ router.centers[ok].T) / (qn[:, None] * cn[ok][None, :])
    tied = d <= d.min(axis=1, keepdims=True) + TIE_TOL
    return np.argmax(tied, axis=1)


def merge_small_clusters(attr_matrix, centers, labels, min_size: int):
    """Fold clusters smaller than ``min_size`` into the subset of the nearest remaining centroid.

    The smallest offending cluster is merged first and the receiving centroid
    is recomputed as the mean of its enlarged subset.  Returns the surviving
    centers and relabelled assignments ``0..K'-1``.
    """
    a = np.asarray(attr_matrix, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64).copy()
    labels = np.asarray(labels).copy()
    alive = list(range(centers.shape[0]))
    while len(alive) > 1:
        sizes = {j: int((labels == j).sum()) for j in alive}
        small = [j for j in alive if sizes[j] < min_size]
        if not small:
            break
        j = min(small, key=lambda c: (sizes[c], c))
        others = [o for o in alive if o != j]
        d = sq_distances(centers[j][None], centers[others])[0]
        tgt = others[int(np.argmin(d))]
        warnings.warn(f"attribute cluster {j} has {sizes[j]} rows < {min_size}; merged into cluster {tgt}",
                      SmallAttributeClusterWarning, stacklevel=2)
        labels[labels == j] = tgt
        centers[tgt] = a[labels == tgt].mean(axis=0)
        alive.remove(j)
    remap = np.full(centers.shape[0], -1)
    remap[alive] = np.arange(len(alive))
    return centers[alive], remap[labels]


@dataclass(frozen=True)
class AttributeFamily:
    """A router plus one trained model per attribute cluster."""

    router: AttributeRouter
    models: tuple[PagerModel, ...]
    attribute_names: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.models) != self.router.K:
            raise InvalidInputError(f"{len(self.models)} models for {self.router.K} clusters")
        if self.attribute_names and len(self.attribute_names) != self.router.T:
            raise InvalidInputError("one attribute name per router column expected")


def train_attribute_models(images, attr_matrix, K_attr: int, pager_cfg: PagerConfig, seed: int = 0,
                           min_cluster: int = 500, attribute_names=(), labels=None) -> AttributeFamily:
    """Cluster the attribute rows, merge small clusters, train one model per subset."""
    a = np.asarray(attr_matrix)
    if len(a) != len(images):
        raise InvalidInputError(f"{len(a)} attribute rows for {len(images)} images")
    cl = cluster_attributes(a, K_attr, seed=seed)
    centers, assign = merge_small_clusters(a, cl.router.centers, cl.labels, min_cluster)
    # archive precision, so a reloaded family routes identically
    router = AttributeRouter(centers.astype(np.float32).astype(np.float64))
    models = []
    for j in range(router.K):
        idx = np.flatnonzero(assign == j)
        log.info("attribute cluster %d: %d images", j, len(idx))
        cfg = replace(pager_cfg, seed=pager_cfg.seed + 7919 * (j + 1))
        sub_labels = None if labels is None else np.asarray(labels)[idx]
        m = train(np.asarray(images)[idx], cfg, labels=sub_labels)
        models.append(m.with_metadata(model_id=router.model_ids[j], attribute_cluster=str(j),
                                      cluster_size=str(len(idx))))
    return AttributeFamily(router, tuple(models), tuple(attribute_names))


def generate_with_attributes(family: AttributeFamily, q, seed: int, count: int) -> GenerationResult:
    """Route ``q`` and generate from the chosen cluster's model; ``model_id`` records the provenance."""
    j = route(family.router, q)
    return generate(family.models[j], seed, count)
