"""End-to-end training and progressive generation.

A model is a core generator at the lowest resolution (optionally one per
class) followed by enhancer/booster pairs that double the side each time.
Every generated image ``i`` draws from its own random streams, split from the
root seed with :func:`pager.rng.hash64`, so batch size and chunking never
change the output.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .booster import BoosterConfig, BoosterStage, boost_batch, train_booster
from .enhancer import EnhancerConfig, EnhancerStage, enhance_batch, train_enhancer
from .errors import InvalidInputError
from .generator import CoreGenerator, EmOptions, train_core
from .imageops import as_image, box_downsample, crop_center, pad_center
from .rng import STAGE_CLASS, STAGE_CORE, STAGE_ENHANCE, STAGE_TRAIN_ENHANCE, child_rngs, hash64

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class PagerConfig:
    core_side: int = 4
    resolution: int = 32
    core_k: int = 500
    per_class: bool = False
    # per-class cores use min(core_k, max(1, n_class // class_k_divisor)) components,
    # i.e. about 30 samples per diagonal component on small classes
    class_k_divisor: int = 30
    use_booster: bool = True
    crop: int | None = None
    core_em: EmOptions = EmOptions()
    enhancer: EnhancerConfig = EnhancerConfig()
    booster: BoosterConfig = BoosterConfig()
    dataset: str = "custom"
    seed: int = 0

    def __post_init__(self):
        for name in ("core_side", "resolution"):
            v = getattr(self, name)
            if v < 1 or v & (v - 1):
                raise InvalidInputError(f"{name} must be a power of two, got {v}")
        if self.resolution < self.core_side:
            raise InvalidInputError("resolution must be >= core_side")
        if self.core_k < 1:
            raise InvalidInputError("core_k must be >= 1")
        if self.crop is not None and not 1 <= self.crop <= self.resolution:
            raise InvalidInputError(f"crop must lie in 1..{self.resolution}")

    @classmethod
    def celeba(cls, **kw) -> "PagerConfig":
        """Color faces: 4x4 core (K=500), 4->8->16->32 with K_dc=100, K_ac=3, k=2."""
        base = dict(core_side=4, resolution=32, core_k=500, dataset="celeba",
                    enhancer=EnhancerConfig(k_dc=100, k_ac=3), booster=BoosterConfig(k=2))
        base.update(kw)
        return cls(**base)

    @classmethod
    def mnist(cls, **kw) -> "PagerConfig":
        """28x28 digits padded to 32: per-class 16x16 cores (K=100), one 16->32 stage, crop to 28."""
        base = dict(core_side=16, resolution=32, core_k=100, per_class=True, crop=28, dataset="mnist",
                    enhancer=EnhancerConfig(k_dc=100, k_ac=3), booster=BoosterConfig(k=2))
        base.update(kw)
        return cls(**base)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @property
    def stage_sides(self) -> list[int]:
        sides, s = [], self.core_side * 2
        while s <= self.resolution:
            sides.append(s)
            s *= 2
        return sides


@dataclass(frozen=True)
class PagerModel:
    cores: tuple[CoreGenerator, ...]
    classes: tuple[int, ...] | None
    enhancers: tuple[EnhancerStage, ...]
    boosters: tuple[BoosterStage, ...]
    crop: int | None = None
    metadata: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.cores:
            raise InvalidInputError("model needs at least one core generator")
        if self.classes is not None and len(self.classes) != len(self.cores):
            raise InvalidInputError("one class label per core generator expected")
        sides = {c.side for c in self.cores}
        chans = {c.core_dims[2] for c in self.cores}
        if len(sides) != 1 or len(chans) != 1:
            raise InvalidInputError("all core generators must share side and channel count")
        side = sides.pop()
        for e in self.enhancers:
            if e.resolution != 2 * side:
                raise InvalidInputError(f"stage chain must double: {side} -> {e.resolution}")
            side = e.resolution
        if self.boosters and len(self.boosters) != len(self.enhancers):
            raise InvalidInputError("boosters must match enhancers one to one")
        for e, b in zip(self.enhancers, self.boosters):
            if b.resolution != e.resolution:
                raise InvalidInputError(f"booster at {b.resolution} paired with enhancer at {e.resolution}")
        if self.crop is not None and not 1 <= self.crop <= side:
            raise InvalidInputError(f"crop {self.crop} outside 1..{side}")

    @property
    def core_side(self) -> int:
        return self.cores[0].side

    @property
    def channels(self) -> int:
        return self.cores[0].core_dims[2]

    @property
    def resolution(self) -> int:
        return self.enhancers[-1].resolution if self.enhancers else self.core_side

    @property
    def output_side(self) -> int:
        return self.crop if self.crop is not None else self.resolution

    @property
    def model_id(self) -> str:
        return self.metadata.get("model_id", "pager")

    def with_metadata(self, **kv) -> "PagerModel":
        md = dict(self.metadata)
        md.update({k: str(v) for k, v in kv.items()})
        return replace(self, metadata=md)


@dataclass
class GenerationResult:
    images: np.ndarray  # (N, S, S, c) float32
    labels: np.ndarray | None
    seed: int
    core_seeds: list[int]
    model_id: str


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def prepare_images(images, cfg: PagerConfig) -> tuple[np.ndarray, int | None]:
    """Pad non-power-of-two squares up to ``cfg.resolution`` (centered, zero fill)."""
    a = as_image(images)
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4 or a.shape[0] == 0:
        raise InvalidInputError("need a non-empty image batch")
    h, w = a.shape[1:3]
    if h != w:
        raise InvalidInputError(f"images must be square, got {h}x{w}")
    crop = cfg.crop
    if h & (h - 1):
        if _next_pow2(h) != cfg.resolution:
            raise InvalidInputError(f"{h}x{h} images pad to {_next_pow2(h)}, not the configured {cfg.resolution}")
        a = pad_center(a, cfg.resolution, cfg.resolution)
        crop = crop if crop is not None else h
    elif h != cfg.resolution:
        raise InvalidInputError(f"images are {h}x{h}, configured resolution is {cfg.resolution}")
    return np.ascontiguousarray(a, dtype=np.float32), crop


def _core_k(cfg: PagerConfig, n: int) -> int:
    if cfg.per_class:
        return min(cfg.core_k, max(1, n // cfg.class_k_divisor))
    return min(cfg.core_k, n)


def train(images, cfg: PagerConfig | None = None, labels=None) -> PagerModel:
    """Fit every module bottom-up on ``images`` (at ``cfg.resolution``, or padded to it)."""
    cfg = cfg or PagerConfig()
    a, crop = prepare_images(images, cfg)
    n = a.shape[0]
    t0 = time.perf_counter()
    pyramid = {cfg.resolution: a}
    s = cfg.resolution
    while s > cfg.core_side:
        pyramid[s // 2] = box_downsample(pyramid[s], 2).astype(np.float32)
        s //= 2
    d = int(np.log2(cfg.core_side))
    low = pyramid[cfg.core_side]
    em = replace(cfg.core_em, seed=cfg.core_em.seed + cfg.seed)
    timings = {}
    if cfg.per_class:
        if labels is None:
            raise InvalidInputError("per-class training needs labels")
        labels = np.asarray(labels)
        if len(labels) != n:
            raise InvalidInputError(f"{len(labels)} labels for {n} images")
        classes = tuple(int(c) for c in np.unique(labels))
        cores = []
        for c in classes:
            sub = low[labels == c]
            cores.append(train_core(sub, d, _core_k(cfg, len(sub)), replace(em, seed=em.seed + 101 * c)))
    else:
        classes = None
        cores = [train_core(low, d, _core_k(cfg, n), em)]
    timings["core"] = time.perf_counter() - t0
    enhancers, boosters = [], []
    for i, side in enumerate(cfg.stage_sides):
        t1 = time.perf_counter()
        ecfg = replace(cfg.enhancer, seed=cfg.enhancer.seed + cfg.seed + i,
                       em=replace(cfg.enhancer.em, seed=cfg.enhancer.em.seed + cfg.seed + 31 * i))
        enh = train_enhancer(pyramid[side], ecfg)
        enhancers.append(enh)
        if cfg.use_booster:
            bcfg = replace(cfg.booster, seed=cfg.booster.seed + cfg.seed + i)
            rngs = child_rngs(cfg.seed, STAGE_TRAIN_ENHANCE + i, n)
            boosters.append(train_booster(pyramid[side], enh, bcfg, rngs=rngs))
        timings[f"stage{side}"] = time.perf_counter() - t1
    meta = {
        "dataset": cfg.dataset,
        "train_count": str(n),
        "seed": str(cfg.seed),
        "config": cfg.to_json(),
        "config_hash": hashlib.sha256(cfg.to_json().encode()).hexdigest()[:16],
        "format_version": str(FORMAT_VERSION),
    }
    timings["total"] = time.perf_counter() - t0
    log.info("trained on %d images in %.1fs", n, timings["total"])
    return PagerModel(tuple(cores), classes, tuple(enhancers), tuple(boosters), crop, meta,
                      {"timings": timings})


def _run_stages(model: PagerModel, images: np.ndarray, seed: int, start: int, first_stage: int = 0,
                last_stage: int | None = None) -> np.ndarray:
    cur = images
    last = len(model.enhancers) if last_stage is None else last_stage
    for i in range(first_stage, last):
        rngs = child_rngs(seed, STAGE_ENHANCE + i, cur.shape[0], start=start)
        cur = enhance_batch(model.enhancers[i], cur, rngs)
        if model.boosters:
            cur = boost_batch(model.boosters[i], cur)
    return cur


def generate(model: PagerModel, seed: int, count: int, labels=None, chunk: int = 1024) -> GenerationResult:
    """Sample ``count`` images at the model's output side.

    Per-class models pick each image's class uniformly from its own stream
    unless ``labels`` (one per image, or a single int) are given.
    """
    if count < 0:
        raise InvalidInputError("count must be >= 0")
    if model.classes is None:
        if labels is not None:
            raise InvalidInputError("this model has no classes")
        cls_idx = np.zeros(count, dtype=np.int64)
    else:
        classes = np.array(model.classes)
        if labels is None:
            cls_idx = np.array([int(child_rngs(seed, STAGE_CLASS, 1, start=i)[0].integers(len(classes)))
                                for i in range(count)], dtype=np.int64)
        else:
            lab = np.broadcast_to(np.asarray(labels), (count,))
            pos = {int(c): j for j, c in enumerate(classes)}
            try:
                cls_idx = np.array([pos[int(v)] for v in lab], dtype=np.int64)
            except KeyError as exc:
                raise InvalidInputError(f"class {exc.args[0]} not in model classes {list(classes)}") from exc
    outs = []
    side, c = model.core_side, model.channels
    for s in range(0, count, chunk):
        m = min(chunk, count - s)
        low = np.empty((m, side, side, c))
        core_rngs = child_rngs(seed, STAGE_CORE, m, start=s)
        for j in np.unique(cls_idx[s:s + m]):
            sel = np.flatnonzero(cls_idx[s:s + m] == j)
            core = model.cores[j]
            x = np.stack([core.model.sample(core_rngs[i]) for i in sel])
            low[sel] = np.clip(core.cascade.inverse(x), 0.0, 1.0)
        out = _run_stages(model, low.astype(np.float32), seed, s)
        if model.crop is not None:
            out = crop_center(out, model.crop, model.crop)
        outs.append(np.ascontiguousarray(out, dtype=np.float32))
    images = np.concatenate(outs) if outs else np.zeros((0, model.output_side, model.output_side, c),
                                                        dtype=np.float32)
    lab_out = None if model.classes is None else np.array(model.classes)[cls_idx]
    return GenerationResult(images, lab_out, seed, [hash64(seed, STAGE_CORE, i) for i in range(count)],
                            model.model_id)


def valid_input_sides(model: PagerModel) -> list[int]:
    return [e.input_side for e in model.enhancers] + [model.resolution]


def super_resolve(model: PagerModel, img, target_side: int, seed: int) -> np.ndarray:
    """Run the enhancer/booster stages from ``img``'s side up to ``target_side``."""
    a = as_image(img)
    if a.ndim != 3:
        raise InvalidInputError("super_resolve takes a single (H, W, C) image")
    side = a.shape[0]
    if a.shape[1] != side:
        raise InvalidInputError("input must be square")
    if a.shape[2] != model.channels:
        raise InvalidInputError(f"model expects {model.channels} channels, got {a.shape[2]}")
    sides = valid_input_sides(model)
    if side not in sides:
        raise InvalidInputError(f"input side {side} matches no stage; valid sides: {sides}")
    if target_side not in sides or target_side < side:
        raise InvalidInputError(f"target {target_side} unreachable from {side}; valid targets: "
                                f"{[s for s in sides if s >= side]}")
    if target_side == side:
        return a.astype(np.float32).copy()
    first = sides.index(side)
    last = sides.index(target_side)
    return _run_stages(model, a[None].astype(np.float32), seed, 0, first, last)[0]
