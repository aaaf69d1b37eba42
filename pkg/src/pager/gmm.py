"""Diagonal-covariance Gaussian mixtures: EM fitting, scoring, sampling."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .errors import InvalidInputError
from .kmeans import kmeans_plusplus, sq_distances

log = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
MIN_FLOOR = 1e-12


@dataclass(frozen=True)
class Gmm:
    """K-component mixture with diagonal covariances.

    Parameters are held as float32 (the archive precision); the float64 views
    used for computation are derived from them, with weights renormalized so
    they sum to one in double precision.
    """

    weights32: np.ndarray  # (K,)
    means32: np.ndarray  # (K, n)
    variances32: np.ndarray  # (K, n)
    var_floor: float = 0.0
    info: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        for name in ("weights32", "means32"):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float32))
        v32 = np.ascontiguousarray(self.variances32, dtype=np.float32)
        # float32 rounding must not take a variance below the floor
        v32 = np.where(v32 < self.var_floor, np.nextafter(np.float32(self.var_floor), np.float32(np.inf)), v32)
        object.__setattr__(self, "variances32", v32.astype(np.float32))
        w = self.weights32.astype(np.float64)
        w = w / w.sum()
        v = self.variances32.astype(np.float64)
        object.__setattr__(self, "_w", w)
        object.__setattr__(self, "_mu", self.means32.astype(np.float64))
        object.__setattr__(self, "_var", v)
        object.__setattr__(self, "_iv", 1.0 / v)
        object.__setattr__(self, "_logdet", np.log(v).sum(axis=1))
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_logw", np.log(w))

    @classmethod
    def from_params(cls, weights, means, variances, var_floor: float = 0.0, info: dict | None = None) -> "Gmm":
        return cls(np.asarray(weights), np.asarray(means), np.asarray(variances), float(var_floor), info or {})

    @property
    def K(self) -> int:
        return self.weights32.shape[0]

    @property
    def dim(self) -> int:
        return self.means32.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return self._w

    @property
    def means(self) -> np.ndarray:
        return self._mu

    @property
    def variances(self) -> np.ndarray:
        return self._var

    def mixture_mean(self) -> np.ndarray:
        return self._w @ self._mu

    def component_log_pdf(self, x: np.ndarray) -> np.ndarray:
        """``ln N(x; mu_k, Sigma_k)`` for every row and component, ``(N, K)``."""
        x = self._check(x)
        const = -0.5 * (self.dim * LOG_2PI + self._logdet)
        return _kernels.diag_gauss_scores(x, self._mu, self._iv, const)

    def weighted_log_pdf(self, x: np.ndarray) -> np.ndarray:
        return self.component_log_pdf(x) + self._logw

    def log_pdf(self, x: np.ndarray) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        out = logsumexp(self.weighted_log_pdf(x[None] if single else x), axis=1)
        return float(out[0]) if single else out

    def classify(self, x: np.ndarray, weighted: bool = True) -> np.ndarray | int:
        """Index of the best-scoring component; ties go to the lowest index."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        scores = self.weighted_log_pdf(x[None] if single else x) if weighted else \
            self.component_log_pdf(x[None] if single else x)
        labels = np.argmax(scores, axis=1)
        return int(labels[0]) if single else labels

    def sample(self, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
        """Draw component then Gaussian; one vector (or ``count`` rows)."""
        m = 1 if count is None else count
        u = rng.random(m)
        z = rng.standard_normal((m, self.dim))
        out = self.sample_from_draws(u, z)
        return out[0] if count is None else out

    def sample_from_draws(self, u: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Map uniform draws ``u`` and standard normals ``z`` to mixture samples."""
        k = self.select(u)
        return self._mu[k] + np.sqrt(self._var[k]) * z

    def select(self, u: np.ndarray) -> np.ndarray:
        cdf = np.cumsum(self._w)
        return np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), self.K - 1)

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None]
        if x.shape[1] != self.dim:
            raise InvalidInputError(f"model dimension {self.dim}, got vectors of length {x.shape[1]}")
        return x


def log_pdf(model: Gmm, x) -> float | np.ndarray:
    return model.log_pdf(x)


def classify(model: Gmm, x, weighted: bool = True):
    return model.classify(x, weighted=weighted)


def sample(model: Gmm, rng: np.random.Generator) -> np.ndarray:
    return model.sample(rng)


@dataclass
class _State:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray


def _e_step(x, x2, st: _State) -> tuple[np.ndarray, np.ndarray]:
    """Responsibilities and per-sample log-likelihood (BLAS expansion, data pre-centered)."""
    iv = 1.0 / st.variances
    quad = x2 @ iv.T - 2.0 * (x @ (st.means * iv).T) + (st.means ** 2 * iv).sum(1)
    with np.errstate(divide="ignore"):
        logw = np.log(st.weights)
    lp = logw - 0.5 * (x.shape[1] * LOG_2PI + np.log(st.variances).sum(1)) - 0.5 * quad
    top = lp.max(axis=1, keepdims=True)
    np.subtract(lp, top, out=lp)
    np.exp(lp, out=lp)
    tot = lp.sum(axis=1)
    lp /= tot[:, None]
    return lp, np.log(tot) + top[:, 0]


def _m_step(x, x2, resp, floor, gvar, ll, reseeds: list, it: int) -> _State:
    n = x.shape[0]
    nk = resp.sum(0)
    empty = nk < 1e-8 * n
    safe = np.where(empty, 1.0, nk)
    means = (resp.T @ x) / safe[:, None]
    variances = (resp.T @ x2) / safe[:, None] - means ** 2
    variances = np.maximum(variances, floor)
    weights = nk / n
    if np.any(empty):
        # reseed onto the worst-explained points
        order = np.argsort(ll, kind="stable")
        for j, k in enumerate(np.flatnonzero(empty)):
            means[k] = x[order[j]]
            variances[k] = np.maximum(gvar, floor)
            weights[k] = 1.0 / n
        weights /= weights.sum()
        reseeds.append(it)
    return _State(weights, means, variances)


def _init_state(x, k, rng, floor) -> _State:
    seeds = x[kmeans_plusplus(x, k, rng)]
    labels = np.argmin(sq_distances(x, seeds), axis=1)
    resp = np.zeros((x.shape[0], k))
    resp[np.arange(x.shape[0]), labels] = 1.0
    nk = resp.sum(0)
    means = seeds.copy()
    variances = np.full_like(seeds, floor)
    ok = nk > 0
    means[ok] = (resp.T @ x)[ok] / nk[ok, None]
    variances[ok] = np.maximum((resp.T @ (x * x))[ok] / nk[ok, None] - means[ok] ** 2, floor)
    return _State(np.maximum(nk, 1e-12) / nk.sum(), means, variances)


def fit_em(data, K: int, max_iters: int = 200, tol: float = 1e-5, seed: int = 0,
           var_floor: float | None = None, n_init: int = 3) -> Gmm:
    """Fit a diagonal GMM by EM from k-means++ starts; keeps the best of ``n_init`` runs.

    Stops when the relative improvement of the mean log-likelihood drops below
    ``tol`` or after ``max_iters`` M-steps.  ``info`` on the returned model
    carries ``ll_history`` (mean log-likelihood per E-step), ``n_iter``,
    ``converged`` and ``reseeds`` (iterations where an empty component was
    moved onto the worst-explained sample).
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] < 1:
        raise InvalidInputError("data must be a samples x n matrix with n >= 1")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("data contains NaN or infinite values")
    n = x.shape[0]
    if K < 1 or n < K:
        raise InvalidInputError(f"need at least K={K} samples, got {n}")
    center = x.mean(axis=0)
    x = x - center
    x2 = x * x
    gvar = x2.mean(axis=0)
    floor = float(var_floor) if var_floor is not None else max(1e-6 * float(gvar.mean()), MIN_FLOOR)

    best = None
    for r in range(max(1, n_init)):
        rng = np.random.default_rng([seed, r])
        st = _init_state(x, K, rng, floor)
        history, reseeds, converged = [], [], False
        for it in range(max_iters + 1):
            resp, ll = _e_step(x, x2, st)
            history.append(float(ll.mean()))
            if it > 0 and history[-1] - history[-2] < tol * abs(history[-2]):
                converged = True
                break
            if it == max_iters:
                break
            st = _m_step(x, x2, resp, floor, gvar, ll, reseeds, it)
        if best is None or history[-1] > best[1][-1]:
            best = (st, history, reseeds, converged, r)
        if K == 1:
            break
    st, history, reseeds, converged, r = best
    info = {"ll_history": history, "n_iter": len(history) - 1, "converged": converged,
            "reseeds": reseeds, "restart": r}
    return Gmm.from_params(st.weights, st.means + center, st.variances, floor, info)
