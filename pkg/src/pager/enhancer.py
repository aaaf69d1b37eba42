"""Resolution enhancer: doubles resolution by sampling AC detail conditioned on the DC.

An image ``I`` at side ``R`` is split into ``DC = U(Down(I))`` (box average then
Lanczos upsample) and ``AC = I - DC``.  Training fits a Saab cascade and a GMM
``g_dc`` on the DC, clusters every sample with ``g_dc``, and fits one small GMM
per cluster on Saab features of the AC.  Generation classifies the upsampled
input, samples AC features from that cluster's GMM, inverts them and adds them
back only where the Canny mask of the DC is on.

The refinement is then repeated on every quadrant, sub-quadrant, ... down to
windows of side ``2 * recursion_floor``.  Windows at the same depth share one
model bank fitted on the pooled training windows of that depth.  Inside a
window, pixels change only where both the window's own mask and the
full-frame mask are on; elsewhere the previous content is kept, so the result
equals the full-frame DC wherever the full-frame mask is off.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .generator import EmOptions
from .gmm import Gmm, fit_em
from .imageops import (CannyConfig, as_image, box_downsample, canny_mask_cfg, flush_tiny,
                       from_windows, lanczos_upsample, to_windows)
from .saab import SaabCascade, fit_cascade

log = logging.getLogger(__name__)


class SmallClusterWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EnhancerConfig:
    k_dc: int = 100
    k_ac: int = 3
    canny: CannyConfig = CannyConfig()
    recursion_floor: int = 2
    dc_weighted: bool = False
    max_train_windows: int | None = 20000
    # one EM start per bank: the 1024-d full-frame fit dominates training time
    em: EmOptions = EmOptions(max_iters=100, n_init=1)
    seed: int = 0


@dataclass(frozen=True)
class WindowModel:
    """DC/AC model bank for windows of one side length."""

    side: int
    dc_cascade: SaabCascade
    g_dc: Gmm
    ac_cascade: SaabCascade
    g_ac: tuple[Gmm, ...]

    def __post_init__(self):
        if len(self.g_ac) != self.g_dc.K:
            raise InvalidInputError(f"{len(self.g_ac)} AC models for {self.g_dc.K} DC clusters")
        if self.dc_cascade.output_dim != self.ac_cascade.output_dim:
            raise InvalidInputError("DC and AC cascades must have equal output dimension")


@dataclass(frozen=True)
class EnhancerStage:
    resolution: int
    channels: int
    levels: tuple[WindowModel, ...]
    mask: CannyConfig = CannyConfig()
    recursion_floor: int = 2
    dc_weighted: bool = False
    info: dict = field(default_factory=dict, compare=False)

    @property
    def input_side(self) -> int:
        return self.resolution // 2

    # the full-frame bank, under the names used for a single-level enhancer
    @property
    def dc_cascade(self) -> SaabCascade:
        return self.levels[0].dc_cascade

    @property
    def g_dc(self) -> Gmm:
        return self.levels[0].g_dc

    @property
    def ac_cascade(self) -> SaabCascade:
        return self.levels[0].ac_cascade

    @property
    def g_ac(self) -> tuple[Gmm, ...]:
        return self.levels[0].g_ac


def window_sides(resolution: int, recursion_floor: int = 2) -> list[int]:
    """Window sides visited by the recursion: ``R, R/2, ...`` while larger than the floor."""
    sides = []
    s = resolution
    while s > recursion_floor and s >= 2:
        sides.append(s)
        s //= 2
    return sides


def dc_of(images: np.ndarray) -> np.ndarray:
    """``U(Down(I))`` rounded to float32 (tiny values flushed to zero)."""
    return flush_tiny(lanczos_upsample(box_downsample(images, 2), 2))


def dc_ac_split(images) -> tuple[np.ndarray, np.ndarray]:
    """``(DC, AC)`` with ``DC + AC == I`` (DC float32, AC float64)."""
    a = as_image(images).astype(np.float32)
    dc = dc_of(a)
    return dc, a.astype(np.float64) - dc.astype(np.float64)


def _distinct_rows(a: np.ndarray) -> int:
    return int(np.unique(a.reshape(a.shape[0], -1), axis=0).shape[0])


def _fit_bank(windows: np.ndarray, cfg: EnhancerConfig, level: int) -> WindowModel:
    side = windows.shape[1]
    stages = int(np.log2(side))
    n = windows.shape[0]
    dc, ac = dc_ac_split(windows)
    dc_cascade = fit_cascade(dc, stages)
    x_dc = dc_cascade.forward(dc)
    em = cfg.em.kwargs()
    em["seed"] = cfg.em.seed + 1009 * level
    # more components than distinct windows would leave some empty, and an empty
    # (reseeded, broad) component captures queries under unweighted classification
    g_dc = fit_em(x_dc, min(cfg.k_dc, _distinct_rows(dc)), **em)
    labels = g_dc.classify(x_dc, weighted=cfg.dc_weighted)
    ac_cascade = fit_cascade(ac, stages)
    x_ac = ac_cascade.forward(ac)
    fallback = None
    g_ac = []
    small = []
    for k in range(g_dc.K):
        members = x_ac[labels == k]
        m = members.shape[0]
        if m == 0:
            if fallback is None:
                fallback = fit_em(x_ac, 1, **em)
            g_ac.append(fallback)
            continue
        k_ac = cfg.k_ac
        if m < cfg.k_ac:
            k_ac = max(1, m // 10)
            small.append(k)
        k_ac = min(k_ac, _distinct_rows(members))
        em_k = dict(em, seed=em["seed"] + k + 1)
        g_ac.append(fit_em(members, k_ac, **em_k))
    if small:
        warnings.warn(f"side {side}: {len(small)} DC cluster(s) have fewer than {cfg.k_ac} samples "
                      f"(first: {small[:5]}); fitted with max(1, size // 10) AC components",
                      SmallClusterWarning, stacklevel=3)
    log.info("enhancer bank side=%d windows=%d K_dc=%d", side, n, g_dc.K)
    return WindowModel(side, dc_cascade, g_dc, ac_cascade, tuple(g_ac))


def train_enhancer(images, cfg: EnhancerConfig | None = None) -> EnhancerStage:
    """Fit model banks for the full frame and every recursion depth."""
    cfg = cfg or EnhancerConfig()
    a = as_image(images)
    if a.ndim == 3:
        a = a[None]
    n, h, w, c = a.shape
    if n == 0:
        raise InvalidInputError("empty training set")
    if h != w or h < 2 or h & (h - 1):
        raise InvalidInputError(f"enhancer needs square power-of-two images, got {h}x{w}")
    a = a.astype(np.float32)
    levels = []
    for level, side in enumerate(window_sides(h, cfg.recursion_floor)):
        win = to_windows(a, side).reshape(-1, side, side, c)
        if cfg.max_train_windows is not None and win.shape[0] > cfg.max_train_windows:
            rng = np.random.default_rng([cfg.seed, level])
            idx = np.sort(rng.choice(win.shape[0], size=cfg.max_train_windows, replace=False))
            win = win[idx]
        levels.append(_fit_bank(np.ascontiguousarray(win), cfg, level))
    return EnhancerStage(h, c, tuple(levels), cfg.canny, cfg.recursion_floor, cfg.dc_weighted,
                         {"train_count": int(n)})


def _sample_ac(bank: WindowModel, labels: np.ndarray, u: np.ndarray, z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    for k in np.unique(labels):
        sel = labels == k
        out[sel] = bank.g_ac[k].sample_from_draws(u[sel], z[sel])
    return out


def _level_pass(stage: EnhancerStage, level: int, cur: np.ndarray | None, low: np.ndarray | None,
                frame_mask: np.ndarray | None, rngs: Sequence[np.random.Generator]):
    """One refinement pass over all windows of one depth; returns (image, frame mask)."""
    bank = stage.levels[level]
    side = bank.side
    n = len(rngs)
    c = stage.channels
    r = stage.resolution
    if level == 0:
        dc = flush_tiny(lanczos_upsample(low, 2))
        win = None
    else:
        win = to_windows(cur, side).reshape(-1, side, side, c)
        dc = dc_of(win)
    per_image = dc.shape[0] // n
    x_dc = bank.dc_cascade.forward(dc)
    labels = bank.g_dc.classify(x_dc, weighted=stage.dc_weighted)
    dim = bank.ac_cascade.output_dim
    u = np.empty(dc.shape[0])
    z = np.empty((dc.shape[0], dim))
    for i, g in enumerate(rngs):
        u[i * per_image:(i + 1) * per_image] = g.random(per_image)
        z[i * per_image:(i + 1) * per_image] = g.standard_normal((per_image, dim))
    ac = bank.ac_cascade.inverse(_sample_ac(bank, labels, u, z))
    mask = canny_mask_cfg(dc, stage.mask)[..., None]
    dc64 = dc.astype(np.float64)
    if level == 0:
        out = flush_tiny(np.where(mask > 0, np.clip(dc64 + ac, 0.0, 1.0), dc64))
        return out, mask
    gate = mask * to_windows(frame_mask, side).reshape(-1, side, side, 1)
    refined = flush_tiny(np.where(gate > 0, np.clip(dc64 + ac, 0.0, 1.0), win.astype(np.float64)))
    return from_windows(refined.reshape(n, per_image, side, side, c), r, r), frame_mask


def enhance_batch(stage: EnhancerStage, images, rngs: Sequence[np.random.Generator],
                  chunk: int = 1024, return_mask: bool = False):
    """Enhance ``(N, R/2, R/2, c)`` images to ``(N, R, R, c)`` with one generator per image."""
    a = as_image(images)
    if a.ndim == 3:
        a = a[None]
    if a.shape[1] != stage.input_side or a.shape[2] != stage.input_side:
        raise InvalidInputError(f"enhancer for {stage.resolution}x{stage.resolution} expects "
                                f"{stage.input_side}x{stage.input_side} input, got {a.shape[1]}x{a.shape[2]}")
    if a.shape[3] != stage.channels:
        raise InvalidInputError(f"expected {stage.channels} channels, got {a.shape[3]}")
    if len(rngs) != a.shape[0]:
        raise InvalidInputError("need exactly one generator per image")
    outs, masks = [], []
    for s in range(0, a.shape[0], chunk):
        g = rngs[s:s + chunk]
        cur, frame_mask = _level_pass(stage, 0, None, a[s:s + chunk].astype(np.float32), None, g)
        for level in range(1, len(stage.levels)):
            cur, _ = _level_pass(stage, level, cur, None, frame_mask, g)
        outs.append(cur)
        masks.append(frame_mask[..., 0])
    out = np.concatenate(outs) if outs else np.zeros((0, stage.resolution, stage.resolution, stage.channels),
                                                     dtype=np.float32)
    if return_mask:
        return out, (np.concatenate(masks) if masks else np.zeros(out.shape[:3], dtype=np.float32))
    return out


def enhance(stage: EnhancerStage, img, rng: np.random.Generator) -> np.ndarray:
    """Enhance a single ``(R/2, R/2, c)`` image."""
    a = as_image(img)
    return enhance_batch(stage, a[None], [rng])[0]
