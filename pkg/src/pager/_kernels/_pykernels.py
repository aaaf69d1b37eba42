"""Pure numpy implementations of the hot kernels.

Arithmetic is ordered exactly like the compiled versions in ``_ckernels.pyx``
so both backends return identical edge maps.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

BLUR_RADIUS = 3
TAN_22_5 = 0.41421356237309503
TAN_67_5 = 2.414213562373095
NMS_EPS = 1e-12


def gaussian_taps(sigma: float) -> np.ndarray:
    j = np.arange(-BLUR_RADIUS, BLUR_RADIUS + 1, dtype=np.float64)
    w = np.exp(-(j * j) / (2.0 * sigma * sigma))
    return w / w.sum()


def _blur_axis(img: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    n = img.shape[axis]
    acc = np.zeros_like(img)
    for j, w in enumerate(taps):
        idx = np.clip(np.arange(n) + j - BLUR_RADIUS, 0, n - 1)
        acc = acc + w * np.take(img, idx, axis=axis)
    return acc


def _gradients(b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _, h, w = b.shape
    p = np.pad(b, ((0, 0), (1, 1), (1, 1)), mode="edge")
    up, mid, dn = p[:, 0:h], p[:, 1:h + 1], p[:, 2:h + 2]
    gx = ((up[:, :, 2:] - up[:, :, :-2]) + 2.0 * (mid[:, :, 2:] - mid[:, :, :-2])
          + (dn[:, :, 2:] - dn[:, :, :-2])) * 0.25
    lf, md, rt = p[:, :, 0:w], p[:, :, 1:w + 1], p[:, :, 2:w + 2]
    gy = ((lf[:, 2:, :] - lf[:, :-2, :]) + 2.0 * (md[:, 2:, :] - md[:, :-2, :])
          + (rt[:, 2:, :] - rt[:, :-2, :])) * 0.25
    return gx, gy


def _non_max_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    _, h, w = mag.shape
    p = np.pad(mag, ((0, 0), (1, 1), (1, 1)), mode="constant")

    def nb(dy: int, dx: int) -> np.ndarray:
        return p[:, 1 + dy:1 + dy + h, 1 + dx:1 + dx + w]

    ax, ay = np.abs(gx), np.abs(gy)
    horiz = ay <= TAN_22_5 * ax
    vert = ~horiz & (ay > TAN_67_5 * ax)
    diag_main = ~horiz & ~vert & (gx * gy > 0)
    diag_anti = ~horiz & ~vert & ~diag_main

    prev = np.where(horiz, nb(0, -1), np.where(vert, nb(-1, 0),
                    np.where(diag_main, nb(-1, -1), nb(-1, 1))))
    nxt = np.where(horiz, nb(0, 1), np.where(vert, nb(1, 0),
                   np.where(diag_main, nb(1, 1), nb(1, -1))))
    del diag_anti
    return (mag > 0.0) & (mag >= prev - NMS_EPS) & (mag > nxt + NMS_EPS)


def canny_edges(luma: np.ndarray, low: float, high: float, sigma: float = 1.0) -> np.ndarray:
    """Thin Canny edge map for a batch ``(N, H, W)`` of float64 luma images."""
    luma = np.ascontiguousarray(luma, dtype=np.float64)
    taps = gaussian_taps(sigma)
    b = _blur_axis(_blur_axis(luma, taps, 2), taps, 1)
    gx, gy = _gradients(b)
    mag = np.sqrt(gx * gx + gy * gy)
    keep = _non_max_suppression(mag, gx, gy)
    weak = keep & (mag >= low)
    strong = keep & (mag >= high)
    out = np.zeros(luma.shape, dtype=np.uint8)
    structure = np.zeros((3, 3, 3), dtype=bool)
    structure[1] = True
    labels, n = ndimage.label(weak, structure=structure)
    if n:
        hit = np.zeros(n + 1, dtype=bool)
        hit[np.unique(labels[strong])] = True
        hit[0] = False
        out[hit[labels]] = 1
    return out


def diag_gauss_scores(x: np.ndarray, means: np.ndarray, inv_var: np.ndarray,
                      log_const: np.ndarray, chunk: int = 256) -> np.ndarray:
    """``out[i, k] = log_const[k] - 0.5 * sum_d (x[i,d] - means[k,d])**2 * inv_var[k,d]``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    out = np.empty((n, means.shape[0]), dtype=np.float64)
    step = max(1, chunk * 4096 // max(1, means.size))
    for s in range(0, n, step):
        d = x[s:s + step, None, :] - means[None, :, :]
        out[s:s + step] = log_const - 0.5 * np.einsum("ikd,ikd,kd->ik", d, d, inv_var, optimize=False)
    return out
