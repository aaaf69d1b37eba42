"""Unconditional core generator: a GMM over Saab core vectors of low-resolution images."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .gmm import Gmm, fit_em
from .imageops import as_image, clip_unit
from .saab import SaabCascade, fit_cascade


@dataclass(frozen=True)
class EmOptions:
    max_iters: int = 200
    tol: float = 1e-5
    seed: int = 0
    var_floor: float | None = None
    n_init: int = 3

    def kwargs(self) -> dict:
        return {"max_iters": self.max_iters, "tol": self.tol, "seed": self.seed,
                "var_floor": self.var_floor, "n_init": self.n_init}


@dataclass(frozen=True)
class CoreGenerator:
    cascade: SaabCascade
    model: Gmm
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.model.dim != self.cascade.output_dim:
            raise InvalidInputError(f"GMM dimension {self.model.dim} != core dimension {self.cascade.output_dim}")

    @property
    def core_dims(self) -> tuple[int, int, int]:
        return self.cascade.input_dims

    @property
    def side(self) -> int:
        return self.cascade.input_dims[0]


def train_core(images, d: int, K: int, em_opts: EmOptions | None = None) -> CoreGenerator:
    """Fit a ``d``-stage cascade on ``2^d``-sided images and a ``K``-component GMM on their core vectors."""
    a = as_image(images)
    if a.ndim == 3:
        a = a[None]
    side = 2 ** d
    if a.shape[1] != side or a.shape[2] != side:
        raise InvalidInputError(f"core images must be {side}x{side}, got {a.shape[1]}x{a.shape[2]}")
    em_opts = em_opts or EmOptions()
    cascade = fit_cascade(a, d)
    feats = cascade.forward(a)
    model = fit_em(feats, K, **em_opts.kwargs())
    return CoreGenerator(cascade, model, {"train_count": int(a.shape[0])})


def generate_core(gen: CoreGenerator, rng: np.random.Generator | Sequence[np.random.Generator],
                  count: int | None = None) -> np.ndarray:
    """Sample ``(N, s, s, c)`` images.

    ``rng`` is either a list of per-image generators (one draw each) or a
    single generator consumed sequentially for ``count`` images.
    """
    if isinstance(rng, np.random.Generator):
        rngs = [rng] * (1 if count is None else count)
    else:
        rngs = list(rng)
        if count is not None and count != len(rngs):
            raise InvalidInputError("count disagrees with the number of generators")
    if not rngs:
        h, w, c = gen.core_dims
        return np.zeros((0, h, w, c))
    x = np.stack([gen.model.sample(r) for r in rngs])
    return clip_unit(gen.cascade.inverse(x))
