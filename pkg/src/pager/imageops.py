"""Raster primitives shared by every stage.

Images are float arrays shaped ``(H, W, C)``; most functions also accept a
leading batch axis ``(N, H, W, C)``.  Samples live in [0, 1] except residuals
(AC components, booster residuals), which are unbounded.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from . import _kernels
from .errors import InvalidInputError

LANCZOS_A = 3
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class CannyConfig:
    low: float = 0.1
    high: float = 0.25
    sigma: float = 1.0
    dilate_radius: int = 1

    def __post_init__(self):
        if not (0.0 <= self.low < self.high <= 1.0):
            raise InvalidInputError(f"need 0 <= low < high <= 1, got low={self.low}, high={self.high}")
        if self.dilate_radius < 0:
            raise InvalidInputError("dilate_radius must be >= 0")


def as_image(img) -> np.ndarray:
    """Promote a 2-D grayscale array to ``(H, W, 1)``."""
    a = np.asarray(img)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim not in (3, 4):
        raise InvalidInputError(f"expected (H, W, C) or (N, H, W, C), got shape {a.shape}")
    return a


def _lanczos(t: np.ndarray) -> np.ndarray:
    out = np.sinc(t) * np.sinc(t / LANCZOS_A)
    out[np.abs(t) >= LANCZOS_A] = 0.0
    return out


@lru_cache(maxsize=64)
def lanczos_matrix(n_in: int, factor: int) -> np.ndarray:
    """``(n_in*factor, n_in)`` resampling matrix with edge-clamped taps.

    Output sample ``i`` sits at source coordinate ``(i + 0.5)/factor - 0.5``;
    weights of each row are normalized to sum to one.
    """
    n_out = n_in * factor
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) / factor - 0.5
        taps = np.arange(int(np.floor(center)) - LANCZOS_A + 1, int(np.floor(center)) + LANCZOS_A + 1)
        w = _lanczos(center - taps)
        w /= w.sum()
        np.add.at(mat[i], np.clip(taps, 0, n_in - 1), w)
    mat.setflags(write=False)
    return mat


def lanczos_upsample(img: np.ndarray, factor: int = 2) -> np.ndarray:
    """Separable Lanczos-3 upsampling (rows then columns), clipped to [0, 1]."""
    return np.clip(lanczos_upsample_raw(img, factor), 0.0, 1.0)


def lanczos_upsample_raw(img: np.ndarray, factor: int = 2) -> np.ndarray:
    """Lanczos upsampling without the final clip."""
    a = as_image(img)
    if factor < 2 or factor & (factor - 1):
        raise InvalidInputError(f"factor must be a power of two >= 2, got {factor}")
    h, w = a.shape[-3], a.shape[-2]
    if h == 0 or w == 0:
        raise InvalidInputError("cannot upsample an empty image")
    a = a.astype(np.float64, copy=False)
    rows = lanczos_matrix(w, factor)
    cols = lanczos_matrix(h, factor)
    # along width (within each row), then along height
    tmp = np.einsum("xw,...hwc->...hxc", rows, a)
    return np.einsum("yh,...hxc->...yxc", cols, tmp)


def box_downsample(img: np.ndarray, factor: int = 2) -> np.ndarray:
    """Mean over non-overlapping ``factor x factor`` blocks."""
    a = as_image(img)
    if factor < 2:
        raise InvalidInputError("factor must be >= 2")
    h, w, c = a.shape[-3:]
    if h % factor or w % factor:
        raise InvalidInputError(f"{h}x{w} image is not divisible by {factor}")
    lead = a.shape[:-3]
    blocks = a.reshape(*lead, h // factor, factor, w // factor, factor, c)
    return blocks.mean(axis=(-4, -2))


def to_luma(img: np.ndarray) -> np.ndarray:
    a = as_image(img).astype(np.float64, copy=False)
    if a.shape[-1] == 1:
        return a[..., 0]
    if a.shape[-1] != 3:
        raise InvalidInputError(f"expected 1 or 3 channels, got {a.shape[-1]}")
    return a @ LUMA


def canny_mask(img: np.ndarray, low: float = 0.1, high: float = 0.25, dilate_radius: int = 1,
               sigma: float = 1.0) -> np.ndarray:
    """Binary edge mask ``(H, W)`` (or ``(N, H, W)``) as float32 in {0, 1}.

    Luma is blurred (sigma 1), Sobel responses are scaled by 1/4 so a unit step
    reads as roughly the intensity jump, thinned by non-maximum suppression and
    linked by hysteresis between ``low`` and ``high``.  The edge map is then
    dilated by a square of side ``2 * dilate_radius + 1``.
    """
    cfg = CannyConfig(low, high, sigma, dilate_radius)
    luma = to_luma(img)
    single = luma.ndim == 2
    if single:
        luma = luma[None]
    edges = _kernels.canny_edges(luma, cfg.low, cfg.high, cfg.sigma)
    if cfg.dilate_radius > 0:
        size = 2 * cfg.dilate_radius + 1
        edges = ndimage.maximum_filter(edges, size=(1, size, size), mode="constant", cval=0)
    mask = edges.astype(np.float32)
    return mask[0] if single else mask


def canny_mask_cfg(img: np.ndarray, cfg: CannyConfig) -> np.ndarray:
    return canny_mask(img, cfg.low, cfg.high, cfg.dilate_radius, cfg.sigma)


def quad_split(img: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Top-left, top-right, bottom-left, bottom-right quadrants."""
    a = as_image(img)
    h, w = a.shape[-3], a.shape[-2]
    if h % 2 or w % 2:
        raise InvalidInputError(f"quad_split needs even dims, got {h}x{w}")
    hh, hw = h // 2, w // 2
    return (a[..., :hh, :hw, :], a[..., :hh, hw:, :], a[..., hh:, :hw, :], a[..., hh:, hw:, :])


def quad_join(tl: np.ndarray, tr: np.ndarray, bl: np.ndarray, br: np.ndarray) -> np.ndarray:
    parts = [as_image(p) for p in (tl, tr, bl, br)]
    if any(p.shape != parts[0].shape for p in parts):
        raise InvalidInputError(f"quadrant shapes differ: {[p.shape for p in parts]}")
    top = np.concatenate(parts[:2], axis=-2)
    bottom = np.concatenate(parts[2:], axis=-2)
    return np.concatenate([top, bottom], axis=-3)


def to_windows(img: np.ndarray, side: int) -> np.ndarray:
    """Cut ``(N, H, W, C)`` into non-overlapping ``side``-square windows.

    Returns ``(N, H/side * W/side, side, side, C)`` with windows in raster order.
    """
    a = as_image(img)
    n, h, w, c = a.shape
    gy, gx = h // side, w // side
    win = a.reshape(n, gy, side, gx, side, c).transpose(0, 1, 3, 2, 4, 5)
    return win.reshape(n, gy * gx, side, side, c)


def from_windows(win: np.ndarray, height: int, width: int) -> np.ndarray:
    """Inverse of :func:`to_windows`."""
    n, _, side, _, c = win.shape
    gy, gx = height // side, width // side
    a = win.reshape(n, gy, gx, side, side, c).transpose(0, 1, 3, 2, 4, 5)
    return a.reshape(n, height, width, c)


def pad_center(img: np.ndarray, target_w: int, target_h: int, fill: float = 0.0) -> np.ndarray:
    a = as_image(img)
    h, w = a.shape[-3], a.shape[-2]
    if target_w < w or target_h < h:
        raise InvalidInputError(f"cannot pad {h}x{w} into {target_h}x{target_w}")
    top, left = (target_h - h) // 2, (target_w - w) // 2
    pad = [(0, 0)] * (a.ndim - 3) + [(top, target_h - h - top), (left, target_w - w - left), (0, 0)]
    return np.pad(a, pad, mode="constant", constant_values=fill)


def crop_center(img: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    a = as_image(img)
    h, w = a.shape[-3], a.shape[-2]
    if target_w > w or target_h > h:
        raise InvalidInputError(f"cannot crop {h}x{w} to {target_h}x{target_w}")
    top, left = (h - target_h) // 2, (w - target_w) // 2
    return a[..., top:top + target_h, left:left + target_w, :]


def clip_unit(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


TINY = np.float32(2.0 ** -24)


def flush_tiny(img: np.ndarray) -> np.ndarray:
    """float32 copy with magnitudes below 2^-24 set to zero.

    Differences of two such arrays in [0, 1] are exact in float64, which is
    what makes the DC/AC and enhanced/residual splits round-trip exactly.
    """
    a = np.asarray(img, dtype=np.float32)
    return np.where(np.abs(a) < TINY, np.float32(0.0), a)
