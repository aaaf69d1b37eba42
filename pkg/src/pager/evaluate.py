"""Desk-scale evaluation: Frechet distance over Saab features, training-size sweeps."""
from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .pipeline import PagerConfig, generate, train
from .saab import SaabCascade, fit_cascade

CSV_HEADER = ("size", "proxy_frechet", "train_seconds", "seed")


@dataclass(frozen=True)
class FrechetReport:
    distance: float  # squared Frechet distance
    n_real: int
    n_gen: int
    feature_dim: int
    feature_source: str


def _psd_sqrt(s: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((s + s.T) / 2.0)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def _trace_sqrt_product(a: np.ndarray, b: np.ndarray) -> float:
    """``tr (A B)^{1/2}`` as ``tr (sqrt(A) B sqrt(A))^{1/2}``."""
    ra = _psd_sqrt(a)
    m = ra @ b @ ra
    vals = np.linalg.eigvalsh((m + m.T) / 2.0)
    return float(np.sqrt(np.clip(vals, 0.0, None)).sum())


def frechet_from_stats(mu_a, cov_a, mu_b, cov_b) -> float:
    """Squared Frechet distance between two Gaussians, symmetric by construction."""
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    cov_a, cov_b = np.atleast_2d(cov_a), np.atleast_2d(cov_b)
    diff = mu_a - mu_b
    cross = 0.5 * (_trace_sqrt_product(cov_a, cov_b) + _trace_sqrt_product(cov_b, cov_a))
    d = float(diff @ diff) + float(np.trace(cov_a) + np.trace(cov_b)) - 2.0 * cross
    return max(d, 0.0)


def _stats(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = f.mean(axis=0)
    c = f - mu
    return mu, (c.T @ c) / (f.shape[0] - 1)


def cascade_id(cascade: SaabCascade) -> str:
    """Short identifier: stage count, input dims and a hash of the parameters."""
    digest = hashlib.sha256()
    for layer in cascade.layers:
        digest.update(layer.mean.tobytes())
        digest.update(layer.basis.tobytes())
    h, w, c = cascade.input_dims
    return f"saab{cascade.num_stages}:{h}x{w}x{c}:{digest.hexdigest()[:12]}"


def saab_frechet(set_a, set_b, cascade: SaabCascade | None) -> FrechetReport:
    """Squared Frechet distance between Gaussian fits of two sets' Saab features.

    With ``cascade=None`` the inputs are taken as ready-made ``(N, n)`` feature
    matrices (or 1-D samples).
    """
    if cascade is None:
        fa = np.asarray(set_a, dtype=np.float64)
        fb = np.asarray(set_b, dtype=np.float64)
        fa = fa[:, None] if fa.ndim == 1 else fa.reshape(len(fa), -1)
        fb = fb[:, None] if fb.ndim == 1 else fb.reshape(len(fb), -1)
        source = "raw"
    else:
        a = np.asarray(set_a, dtype=np.float64)
        b = np.asarray(set_b, dtype=np.float64)
        if a.shape[1:] != b.shape[1:]:
            raise InvalidInputError(f"image dims differ: {a.shape[1:]} vs {b.shape[1:]}")
        fa, fb = cascade.forward(a), cascade.forward(b)
        source = cascade_id(cascade)
    if fa.shape[0] < 2 or fb.shape[0] < 2:
        raise InvalidInputError("need at least 2 samples per set")
    if fa.shape[1] != fb.shape[1]:
        raise InvalidInputError(f"feature dims differ: {fa.shape[1]} vs {fb.shape[1]}")
    mu_a, cov_a = _stats(fa)
    mu_b, cov_b = _stats(fb)
    return FrechetReport(frechet_from_stats(mu_a, cov_a, mu_b, cov_b), fa.shape[0], fb.shape[0], fa.shape[1],
                         source)


def proxy_cascade(real_images, num_stages: int | None = None) -> SaabCascade:
    """Saab cascade for proxy features, fitted on held-out real images only.

    By default it uses as many stride-2 stages as the image side allows.
    """
    a = np.asarray(real_images, dtype=np.float64)
    if a.ndim == 3:
        a = a[..., None]
    if num_stages is None:
        side, num_stages = min(a.shape[1:3]), 0
        while side % 2 == 0 and side > 1:
            side //= 2
            num_stages += 1
        num_stages = max(num_stages, 1)
    return fit_cascade(a, num_stages)


class NearestClassMean:
    """Nearest-class-mean classifier over flattened pixels."""

    def __init__(self, images, labels):
        x = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
        y = np.asarray(labels)
        self.classes = np.unique(y)
        self.means = np.stack([x[y == c].mean(axis=0) for c in self.classes])

    def predict(self, images) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
        d = (x * x).sum(1)[:, None] - 2.0 * x @ self.means.T + (self.means ** 2).sum(1)[None, :]
        return self.classes[np.argmin(d, axis=1)]

    def accuracy(self, images, labels) -> float:
        return float(np.mean(self.predict(images) == np.asarray(labels)))


@dataclass(frozen=True)
class SweepRow:
    size: int
    proxy_frechet: float
    train_seconds: float
    seed: int


def training_size_sweep(images, labels, sizes, cfg: PagerConfig, real_eval, count: int = 1000, seed: int = 0,
                        cascade: SaabCascade | None = None, models: dict | None = None) -> list[SweepRow]:
    """Train one model per size on nested seeded subsets and score ``count`` samples against ``real_eval``.

    ``models``, when given, receives the trained model for each size.
    """
    imgs = np.asarray(images)
    labs = None if labels is None else np.asarray(labels)
    cascade = cascade or proxy_cascade(real_eval)
    order = np.random.default_rng(seed).permutation(len(imgs))
    rows = []
    for size in sizes:
        if not 1 <= size <= len(imgs):
            raise InvalidInputError(f"size {size} outside 1..{len(imgs)}")
        idx = np.sort(order[:size])
        t0 = time.perf_counter()
        m = train(imgs[idx], cfg, labels=None if labs is None else labs[idx])
        secs = time.perf_counter() - t0
        gen = generate(m, seed, count).images
        rows.append(SweepRow(int(size), saab_frechet(real_eval, gen, cascade).distance, secs, seed))
        if models is not None:
            models[size] = m
    return rows


def write_csv(rows, path, fields=CSV_HEADER) -> None:
    """Rows with ``size,proxy_frechet,train_seconds,seed``; ``None`` cells are left empty."""
    with open(Path(path), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            vals = [getattr(r, k) if not isinstance(r, dict) else r.get(k) for k in fields]
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, float) else v) for v in vals])
