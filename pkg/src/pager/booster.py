"""Quality booster: adds back residual detail predicted from stored exemplars.

Training enhances the downsampled training images, keeps the pairs
``(E, R = I - E)`` and indexes ``E`` by a PCA projection.  At generation time
the ``k`` nearest stored ``E`` are combined with locally linear embedding
weights, and the same weights applied to their residuals give ``R_hat``,
which is added inside the Canny mask of the query.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .enhancer import EnhancerStage, enhance_batch
from .errors import InvalidInputError, InvalidStateError
from .imageops import CannyConfig, as_image, box_downsample, canny_mask_cfg, flush_tiny
from .rng import STAGE_TRAIN_ENHANCE, child_rngs

log = logging.getLogger(__name__)

FALLBACK_REG = 1e-3


class SingularNeighborhoodWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BoosterConfig:
    k: int = 2
    reg: float = 1e-3
    pca_dims: int | None = 128  # None stores flattened pixels as features
    max_exemplars: int | None = 50000
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise InvalidInputError("k must be >= 1")
        if self.reg < 0:
            raise InvalidInputError("reg must be >= 0")
        if self.pca_dims is not None and self.pca_dims < 1:
            raise InvalidInputError("pca_dims must be >= 1 or None")


@dataclass(frozen=True)
class BoosterStage:
    resolution: int
    channels: int
    features: np.ndarray  # (M, f) float32
    residuals: np.ndarray  # (M, R*R*c) float32
    pca_mean: np.ndarray | None  # (R*R*c,) float32
    pca_components: np.ndarray | None  # (f, R*R*c) float32, orthonormal rows
    k: int = 2
    reg: float = 1e-3
    mask: CannyConfig = CannyConfig()
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        m = self.features.shape[0]
        if self.residuals.shape[0] != m:
            raise InvalidInputError(f"{m} feature rows but {self.residuals.shape[0]} residual rows")
        if self.residuals.shape[1] != self.resolution ** 2 * self.channels:
            raise InvalidInputError("residual width does not match resolution and channels")
        if not 1 <= self.k <= m:
            raise InvalidInputError(f"k={self.k} needs 1 <= k <= M={m}")
        if (self.pca_components is None) != (self.pca_mean is None):
            raise InvalidInputError("PCA mean and components must be given together")

    @property
    def size(self) -> int:
        return self.features.shape[0]

    def project(self, images: np.ndarray) -> np.ndarray:
        """Feature vectors (float64 values of float32 numbers) for ``(N, R, R, c)`` images."""
        flat = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
        if self.pca_components is None:
            return flat.astype(np.float32).astype(np.float64)
        f = (flat - self.pca_mean.astype(np.float64)) @ self.pca_components.astype(np.float64).T
        return f.astype(np.float32).astype(np.float64)


def _pca(flat: np.ndarray, dims: int, chunk: int = 8192) -> tuple[np.ndarray, np.ndarray]:
    n, d = flat.shape
    mean = flat.mean(axis=0, dtype=np.float64)
    cov = np.zeros((d, d))
    for s in range(0, n, chunk):
        c = flat[s:s + chunk].astype(np.float64) - mean
        cov += c.T @ c
    vals, vecs = np.linalg.eigh(cov / max(n - 1, 1))
    order = np.argsort(-vals, kind="stable")[:min(dims, d)]
    comps = vecs[:, order].T
    # sign convention: largest-magnitude entry positive
    pick = np.argmax(np.abs(comps), axis=1)
    comps *= np.where(comps[np.arange(len(comps)), pick] < 0, -1.0, 1.0)[:, None]
    return mean, comps


def booster_pairs(images, enhancer: EnhancerStage, rngs: Sequence[np.random.Generator]):
    """``(E, R)`` with ``E`` the float32 enhanced downsample and ``R = I - E`` in float64."""
    a = flush_tiny(as_image(images))
    if a.ndim == 3:
        a = a[None]
    e = enhance_batch(enhancer, box_downsample(a, 2).astype(np.float32), rngs)
    return e, a.astype(np.float64) - e.astype(np.float64)


def train_booster(images, enhancer: EnhancerStage, cfg: BoosterConfig | None = None,
                  rngs: Sequence[np.random.Generator] | None = None) -> BoosterStage:
    """Store (features(E), R) exemplar pairs for the enhancer's resolution.

    ``rngs`` supplies one generator per training image for the enhancement
    pass; by default they are split from ``cfg.seed``.
    """
    cfg = cfg or BoosterConfig()
    a = as_image(images)
    if a.ndim == 3:
        a = a[None]
    n = a.shape[0]
    if n == 0:
        raise InvalidInputError("empty training set")
    if a.shape[1] != enhancer.resolution or a.shape[2] != enhancer.resolution:
        raise InvalidInputError(f"booster images must be {enhancer.resolution}x{enhancer.resolution}")
    if rngs is None:
        rngs = child_rngs(cfg.seed, STAGE_TRAIN_ENHANCE, n)
    elif len(rngs) != n:
        raise InvalidInputError("need one generator per training image")
    idx = np.arange(n)
    if cfg.max_exemplars is not None and n > cfg.max_exemplars:
        sub = np.random.default_rng([cfg.seed, 7]).choice(n, size=cfg.max_exemplars, replace=False)
        idx = np.sort(sub)
    e, r = booster_pairs(a[idx], enhancer, [rngs[i] for i in idx])
    flat = e.reshape(len(idx), -1)
    if cfg.pca_dims is None:
        mean = comps = None
        feats = flat.astype(np.float32)
    else:
        mean, comps = _pca(flat, cfg.pca_dims)
        mean, comps = mean.astype(np.float32), comps.astype(np.float32)
        feats = ((flat - mean.astype(np.float64)) @ comps.astype(np.float64).T).astype(np.float32)
    log.info("booster R=%d exemplars=%d features=%d", enhancer.resolution, len(idx), feats.shape[1])
    return BoosterStage(enhancer.resolution, a.shape[3], feats, r.reshape(len(idx), -1).astype(np.float32),
                        mean, comps, min(cfg.k, len(idx)), cfg.reg, enhancer.mask, {"train_count": int(n)})


def lle_weights(query: np.ndarray, neighbors: np.ndarray, reg: float = 1e-3) -> np.ndarray:
    """Sum-to-one weights minimizing ``||query - sum_j w_j n_j||^2``.

    Solves ``(G + reg * tr(G) / k * I) w = 1`` with ``G`` the local Gram
    matrix of ``neighbors - query`` and normalizes.  A singular system (for
    example duplicate neighbors with ``reg=0``) is retried with a larger
    regularizer and a warning; if every neighbor coincides with the query the
    weights are uniform.
    """
    q = np.asarray(query, dtype=np.float64)
    nb = np.asarray(neighbors, dtype=np.float64)
    if nb.ndim != 2 or nb.shape[0] < 1:
        raise InvalidInputError("neighbors must be a non-empty k x f matrix")
    return lle_weights_batch(q[None], nb[None], reg)[0]


def lle_weights_batch(queries: np.ndarray, neighbors: np.ndarray, reg: float = 1e-3) -> np.ndarray:
    """Vectorized ``lle_weights`` for ``(Q, f)`` queries and ``(Q, k, f)`` neighbors."""
    q = np.asarray(queries, dtype=np.float64)
    nb = np.asarray(neighbors, dtype=np.float64)
    k = nb.shape[1]
    if k == 1:
        return np.ones((q.shape[0], 1))
    diff = nb - q[:, None, :]
    g = diff @ diff.transpose(0, 2, 1)
    tr = np.trace(g, axis1=1, axis2=2)
    out = np.full((q.shape[0], k), 1.0 / k)
    live = tr > 0
    if not np.any(live):
        return out
    eye = np.eye(k)
    gl = g[live] + (reg * tr[live] / k)[:, None, None] * eye
    ones = np.ones((gl.shape[0], k, 1))
    try:
        w = np.linalg.solve(gl, ones)[..., 0]
        bad = ~np.all(np.isfinite(w), axis=1) | (np.abs(w.sum(1)) < 1e-300)
    except np.linalg.LinAlgError:
        w = np.zeros((gl.shape[0], k))
        bad = np.ones(gl.shape[0], dtype=bool)
    if np.any(bad):
        warnings.warn("singular neighborhood Gram matrix; raising the regularizer", SingularNeighborhoodWarning,
                      stacklevel=2)
        r2 = max(reg, FALLBACK_REG)
        for i in np.flatnonzero(bad):
            gi = g[live][i]
            w[i] = np.linalg.solve(gi + r2 * tr[live][i] / k * eye, np.ones(k))
    out[live] = w / w.sum(axis=1, keepdims=True)
    return out


def nearest(features: np.ndarray, queries: np.ndarray, k: int, chunk: int = 128) -> np.ndarray:
    """Indices of the ``k`` nearest rows of ``features`` per query, ordered by (distance, index).

    Candidates come from the BLAS distance expansion; the final order uses
    exactly recomputed distances, so results match a linear scan.
    """
    f = np.asarray(features, dtype=np.float64)
    qs = np.asarray(queries, dtype=np.float64)
    m = f.shape[0]
    if not 1 <= k <= m:
        raise InvalidInputError(f"k={k} outside 1..{m}")
    fn = (f * f).sum(1)
    out = np.empty((qs.shape[0], k), dtype=np.int64)
    for s in range(0, qs.shape[0], chunk):
        q = qs[s:s + chunk]
        qn = (q * q).sum(1)
        approx = qn[:, None] - 2.0 * (q @ f.T) + fn[None, :]
        kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
        # expansion error bound, generous
        slack = 1e-9 * (qn + fn.max()) + 1e-12
        for j in range(q.shape[0]):
            cand = np.flatnonzero(approx[j] <= kth[j] + slack[j])
            exact = ((f[cand] - q[j]) ** 2).sum(1)
            order = np.lexsort((cand, exact))[:k]
            out[s + j] = cand[order]
    return out


def boost_batch(stage: BoosterStage, images) -> np.ndarray:
    """``clip(E + mask(E) * R_hat)`` for ``(N, R, R, c)`` enhanced images; unmasked pixels pass through."""
    if stage is None or stage.size == 0:
        raise InvalidStateError("booster is not trained")
    a = as_image(images)
    if a.ndim == 3:
        a = a[None]
    r = stage.resolution
    if a.shape[1:] != (r, r, stage.channels):
        raise InvalidInputError(f"booster expects {r}x{r}x{stage.channels}, got {a.shape[1:]}")
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, r, r, stage.channels), dtype=np.float32)
    q = stage.project(a)
    feats = stage.features.astype(np.float64)
    idx = nearest(feats, q, stage.k)
    w = lle_weights_batch(q, feats[idx], stage.reg)
    res = np.einsum("nk,nkd->nd", w, stage.residuals[idx].astype(np.float64)).reshape(a.shape)
    mask = canny_mask_cfg(a, stage.mask)[..., None]
    e64 = a.astype(np.float64)
    return flush_tiny(np.where(mask > 0, np.clip(e64 + res, 0.0, 1.0), e64))


def boost(stage: BoosterStage, img, rng: np.random.Generator | None = None) -> np.ndarray:
    """Boost one image.  Deterministic; ``rng`` is accepted for interface symmetry and unused."""
    a = as_image(img)
    return boost_batch(stage, a[None])[0]
