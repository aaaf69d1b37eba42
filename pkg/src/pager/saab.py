"""Multi-stage Saab transform (successive subspace learning).

Each stage cuts the feature map into non-overlapping 2x2 windows and maps every
window through an orthonormal basis whose first row is the constant (DC)
direction and whose remaining rows are PCA directions of the DC-removed
patches.  Stage 1 treats all input channels jointly; later stages are
channel-wise, one Saab unit per input channel.  Nothing is pruned, so an image
with ``h*w*c`` samples maps to exactly ``h*w*c`` coefficients and back.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidInputError

WINDOW = 2


class DegenerateDataWarning(UserWarning):
    pass


@lru_cache(maxsize=32)
def _dc_complement(dim: int) -> np.ndarray:
    """Fixed orthonormal basis ``(dim, dim-1)`` of the subspace orthogonal to the DC vector."""
    dc = np.full((dim, 1), 1.0 / np.sqrt(dim))
    q, _ = np.linalg.qr(np.hstack([dc, np.eye(dim)[:, : dim - 1]]))
    comp = q[:, 1:]
    comp.setflags(write=False)
    return comp


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vecs), axis=-2)
    picked = np.take_along_axis(vecs, idx[..., None, :], axis=-2)
    return vecs * np.where(picked < 0, -1.0, 1.0)


def _bases_from_cov(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched Saab basis from patch covariances ``(U, D, D)``."""
    dim = cov.shape[-1]
    dc = np.full(dim, 1.0 / np.sqrt(dim))
    comp = _dc_complement(dim)
    # covariance restricted to the AC subspace: the DC-removed residual covariance
    ac_cov = comp.T @ cov @ comp
    ac_cov = 0.5 * (ac_cov + np.swapaxes(ac_cov, -1, -2))
    vals, vecs = np.linalg.eigh(ac_cov)
    vals, vecs = vals[..., ::-1], vecs[..., ::-1]
    ac_rows = _fix_signs(comp @ vecs)
    basis = np.concatenate([np.broadcast_to(dc, cov.shape[:-2] + (1, dim)),
                            np.swapaxes(ac_rows, -1, -2)], axis=-2)
    dc_energy = np.einsum("d,...de,e->...", dc, cov, dc)
    return basis, np.clip(vals, 0.0, None), dc_energy


@dataclass(frozen=True)
class SaabStage:
    """One Saab unit: ``coeffs = basis @ (patch - mean)``.

    ``energies`` are the AC eigenvalues in non-increasing order; the DC row's
    variance is kept separately in ``dc_energy``.
    """

    mean: np.ndarray
    basis: np.ndarray
    energies: np.ndarray
    dc_energy: float
    in_channels: int
    window: int = WINDOW
    stride: int = WINDOW

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class SaabLayer:
    """All Saab units of one cascade stage, stored batched as float32."""

    mean: np.ndarray  # (U, D)
    basis: np.ndarray  # (U, D, D)
    energies: np.ndarray  # (U, D-1)
    dc_energy: np.ndarray  # (U,)
    in_channels: int
    channelwise: bool

    @property
    def units(self) -> int:
        return self.mean.shape[0]

    @property
    def out_channels(self) -> int:
        return self.mean.size

    def unit(self, u: int) -> SaabStage:
        c = 1 if self.channelwise else self.in_channels
        return SaabStage(self.mean[u], self.basis[u], self.energies[u], float(self.dc_energy[u]), c)

    def patches(self, fmap: np.ndarray) -> np.ndarray:
        """``(N, h, w, C)`` -> ``(N, h/2, w/2, U, D)``."""
        if fmap.shape[-1] != self.in_channels:
            raise InvalidInputError(f"layer expects {self.in_channels} channels, got {fmap.shape[-1]}")
        return extract_patches(fmap, self.channelwise)

    def unpatch(self, p: np.ndarray) -> np.ndarray:
        n, h2, w2 = p.shape[:3]
        c = self.in_channels
        if self.channelwise:
            p = p.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 2, 4, 5, 3)
        else:
            p = p.reshape(n, h2, w2, 2, 2, c)
        return p.transpose(0, 1, 3, 2, 4, 5).reshape(n, h2 * 2, w2 * 2, c)

    def forward(self, fmap: np.ndarray) -> np.ndarray:
        p = self.patches(np.asarray(fmap, dtype=np.float64))
        coeffs = np.einsum("...ud,ued->...ue", p - self.mean.astype(np.float64), self.basis.astype(np.float64))
        n, h2, w2 = coeffs.shape[:3]
        return coeffs.reshape(n, h2, w2, self.out_channels)

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=np.float64)
        n, h2, w2, c = coeffs.shape
        if c != self.out_channels:
            raise InvalidInputError(f"layer produces {self.out_channels} channels, got {c}")
        coeffs = coeffs.reshape(n, h2, w2, self.units, -1)
        p = np.einsum("...ue,ued->...ud", coeffs, self.basis.astype(np.float64)) + self.mean.astype(np.float64)
        return self.unpatch(p)


def extract_patches(fmap: np.ndarray, channelwise: bool) -> np.ndarray:
    """Non-overlapping 2x2 windows: ``(N, h, w, C)`` -> ``(N, h/2, w/2, U, D)``.

    Joint patches (``U = 1``) are ordered (dy, dx, channel); channel-wise
    patches have one unit per channel, ordered (dy, dx).
    """
    n, h, w, c = fmap.shape
    if h % WINDOW or w % WINDOW:
        raise InvalidInputError(f"feature map {h}x{w} not divisible by {WINDOW}")
    p = fmap.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    if channelwise:
        return p.transpose(0, 1, 2, 5, 3, 4).reshape(n, h // 2, w // 2, c, 4)
    return p.reshape(n, h // 2, w // 2, 1, 4 * c)


def _patch_stats(patches: np.ndarray, chunk: int = 1 << 16) -> tuple[np.ndarray, np.ndarray]:
    """Mean ``(U, D)`` and covariance ``(U, D, D)`` of ``(S, U, D)`` patches, two-pass, fixed order."""
    s = patches.shape[0]
    mean = np.zeros(patches.shape[1:])
    for i in range(0, s, chunk):
        mean += patches[i:i + chunk].sum(axis=0)
    mean /= s
    cov = np.zeros(patches.shape[1:] + patches.shape[-1:])
    for i in range(0, s, chunk):
        x = patches[i:i + chunk] - mean
        cov += np.einsum("sud,sue->ude", x, x)
    cov /= s
    return mean, cov


def _warn_if_degenerate(n_samples: int, dim: int):
    if n_samples < dim + 1:
        warnings.warn(f"{n_samples} samples cannot span {dim} dimensions; basis completed orthonormally",
                      DegenerateDataWarning, stacklevel=3)


def fit_stage(patch_matrix: np.ndarray, in_channels: int | None = None) -> SaabStage:
    """Fit a single Saab unit on a ``samples x dim`` patch matrix."""
    x = np.asarray(patch_matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidInputError("need a 2-D patch matrix with at least 2 samples")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("patch matrix contains non-finite values")
    dim = x.shape[1]
    if in_channels is None:
        in_channels = max(1, dim // (WINDOW * WINDOW))
    if dim != WINDOW * WINDOW * in_channels:
        raise InvalidInputError(f"patch dim {dim} != {WINDOW}x{WINDOW}x{in_channels}")
    _warn_if_degenerate(x.shape[0], dim)
    mean, cov = _patch_stats(x[:, None, :])
    basis, vals, dce = _bases_from_cov(cov)
    return SaabStage(mean[0].astype(np.float32), basis[0].astype(np.float32),
                     vals[0].astype(np.float32), float(dce[0]), in_channels)


def _fit_layer(fmap: np.ndarray, channelwise: bool) -> SaabLayer:
    c = fmap.shape[-1]
    p = extract_patches(fmap, channelwise)
    flat = p.reshape(-1, *p.shape[-2:])
    _warn_if_degenerate(flat.shape[0], flat.shape[-1])
    mean, cov = _patch_stats(flat)
    basis, vals, dce = _bases_from_cov(cov)
    return SaabLayer(mean.astype(np.float32), basis.astype(np.float32), vals.astype(np.float32),
                     dce.astype(np.float32), c, channelwise)


@dataclass(frozen=True)
class SaabCascade:
    layers: tuple[SaabLayer, ...]
    input_dims: tuple[int, int, int]

    @property
    def stages(self) -> tuple[SaabLayer, ...]:
        return self.layers

    @property
    def output_dim(self) -> int:
        h, w, c = self.input_dims
        return h * w * c

    @property
    def num_stages(self) -> int:
        return len(self.layers)

    def _batch(self, images) -> tuple[np.ndarray, bool]:
        a = np.asarray(images, dtype=np.float64)
        single = a.ndim == 3 or (a.ndim == 2 and len(self.input_dims) == 3 and self.input_dims[2] == 1)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim == 3:
            a = a[None]
        if a.shape[1:] != tuple(self.input_dims):
            raise InvalidInputError(f"cascade expects {self.input_dims}, got {a.shape[1:]}")
        return a, single

    def forward(self, images) -> np.ndarray:
        """Core vectors ``(N, n)`` (or ``(n,)`` for one image), flattened row-major then channel."""
        fmap, single = self._batch(images)
        for layer in self.layers:
            fmap = layer.forward(fmap)
        out = fmap.reshape(fmap.shape[0], -1)
        return out[0] if single else out

    def forward_maps(self, images) -> list[np.ndarray]:
        """Feature maps after every stage (training diagnostics)."""
        fmap, _ = self._batch(images)
        maps = []
        for layer in self.layers:
            fmap = layer.forward(fmap)
            maps.append(fmap)
        return maps

    def inverse(self, x) -> np.ndarray:
        """Inverse transform; the result is not clipped."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None]
        if x.ndim != 2 or x.shape[1] != self.output_dim:
            raise InvalidInputError(f"expected core vectors of length {self.output_dim}, got {x.shape}")
        h, w, c = self.input_dims
        f = 2 ** len(self.layers)
        last_c = self.layers[-1].out_channels if self.layers else c
        fmap = x.reshape(x.shape[0], h // f, w // f, last_c)
        for layer in reversed(self.layers):
            fmap = layer.inverse(fmap)
        return fmap[0] if single else fmap


def fit_cascade(images, num_stages: int, max_samples: int | None = None, seed: int = 0) -> SaabCascade:
    """Fit ``num_stages`` Saab stages, each on the previous stage's outputs.

    ``max_samples`` fits on a seeded uniform subsample of the images.
    """
    a = np.asarray(images, dtype=np.float64)
    if a.ndim == 3:
        a = a[..., None]
    if a.ndim != 4 or a.shape[0] == 0:
        raise InvalidInputError("need a non-empty (N, H, W, C) image batch")
    n, h, w, c = a.shape
    if num_stages < 1:
        raise InvalidInputError("num_stages must be >= 1")
    f = 2 ** num_stages
    if h % f or w % f:
        raise InvalidInputError(f"{h}x{w} images cannot pass {num_stages} stride-2 stages")
    if max_samples is not None and n > max_samples:
        idx = np.sort(np.random.default_rng(seed).choice(n, size=max_samples, replace=False))
        a = a[idx]
    layers = []
    fmap = a
    for s in range(num_stages):
        layer = _fit_layer(fmap, channelwise=s > 0)
        layers.append(layer)
        fmap = layer.forward(fmap)
    return SaabCascade(tuple(layers), (h, w, c))


def forward(cascade: SaabCascade, img) -> np.ndarray:
    return cascade.forward(img)


def inverse(cascade: SaabCascade, x) -> np.ndarray:
    return cascade.inverse(x)


def forward_stage(stage: SaabStage | SaabLayer, fmap: np.ndarray) -> np.ndarray:
    """Apply one unit/layer to ``(H, W, C)`` or ``(N, H, W, C)``."""
    layer = _as_layer(stage)
    a = np.asarray(fmap, dtype=np.float64)
    single = a.ndim == 3
    out = layer.forward(a[None] if single else a)
    return out[0] if single else out


def inverse_stage(stage: SaabStage | SaabLayer, coeffs: np.ndarray) -> np.ndarray:
    layer = _as_layer(stage)
    a = np.asarray(coeffs, dtype=np.float64)
    single = a.ndim == 3
    out = layer.inverse(a[None] if single else a)
    return out[0] if single else out


def _as_layer(stage: SaabStage | SaabLayer) -> SaabLayer:
    if isinstance(stage, SaabLayer):
        return stage
    return SaabLayer(stage.mean[None], stage.basis[None], stage.energies[None],
                     np.array([stage.dc_energy], dtype=np.float32), stage.in_channels, False)


def decorrelation_ratio(cascade: SaabCascade, images, include_dc: bool = False) -> list[float]:
    """Worst per-unit off-diagonal/diagonal Frobenius ratio of coefficient covariance, per stage.

    By default only the AC coefficients are considered: those are the
    directions PCA diagonalizes.  ``include_dc=True`` adds the DC row.
    """
    fmap, _ = cascade._batch(images)
    ratios = []
    for layer in cascade.layers:
        out = layer.forward(fmap)
        coeffs = out.reshape(-1, layer.units, layer.mean.shape[1])
        if not include_dc:
            coeffs = coeffs[..., 1:]
        _, cov = _patch_stats(coeffs)
        diag = np.einsum("udd->ud", cov)
        off = cov - np.einsum("ud,de->ude", diag, np.eye(cov.shape[-1]))
        num = np.sqrt((off ** 2).sum(axis=(1, 2)))
        den = np.sqrt((diag ** 2).sum(axis=1))
        ratios.append(float(np.max(np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0))))
        fmap = out
    return ratios
