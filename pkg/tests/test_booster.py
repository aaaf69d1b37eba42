import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import blocky
from pager.booster import (BoosterConfig, BoosterStage, SingularNeighborhoodWarning, boost, boost_batch,
                           booster_pairs, lle_weights, lle_weights_batch, nearest, train_booster)
from pager.enhancer import EnhancerConfig, train_enhancer
from pager.errors import InvalidInputError, InvalidStateError
from pager.generator import EmOptions
from pager.imageops import box_downsample, canny_mask
from pager.rng import child_rngs


def kkt_weights(q, nb, ridge=0.0):
    """Constrained least squares through the full KKT system, in the original coordinates."""
    a = nb.T
    k = nb.shape[0]
    m = np.zeros((k + 1, k + 1))
    m[:k, :k] = 2 * (a.T @ a) + 2 * ridge * np.eye(k)
    m[:k, k] = m[k, :k] = 1.0
    rhs = np.concatenate([2 * a.T @ q, [1.0]])
    return np.linalg.solve(m, rhs)[:k]


def test_lle_exact_match_and_midpoint():
    nb = np.array([[0.0, 0.0, 1.0], [1.0, 2.0, 0.0]])
    np.testing.assert_allclose(lle_weights(nb[0], nb, reg=1e-12), [1.0, 0.0], atol=1e-9)
    np.testing.assert_allclose(lle_weights(nb.mean(0), nb, reg=1e-12), [0.5, 0.5], atol=1e-12)


def test_lle_matches_kkt_oracle():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(2, 5))
        q, nb = rng.standard_normal(5), rng.standard_normal((k, 5))
        w = lle_weights(q, nb, reg=0.0)
        worst = max(worst, np.abs(w - kkt_weights(q, nb)).max())
        assert abs(w.sum() - 1.0) <= 1e-12
    assert worst <= 1e-8


def test_lle_regularised_matches_ridge_kkt():
    rng = np.random.default_rng(1)
    for _ in range(200):
        q, nb = rng.standard_normal(5), rng.standard_normal((4, 5))
        reg = float(rng.uniform(1e-4, 1e-1))
        diff = nb - q
        ridge = reg * np.trace(diff @ diff.T) / 4
        # shifting by q leaves the constrained problem unchanged
        np.testing.assert_allclose(lle_weights(q, nb, reg), kkt_weights(np.zeros(5), diff, ridge), atol=1e-8)


def test_lle_degenerate_neighbourhoods():
    assert lle_weights(np.zeros(3), np.ones((1, 3))).tolist() == [1.0]
    np.testing.assert_array_equal(lle_weights(np.ones(3), np.ones((3, 3))), np.full(3, 1 / 3))
    nb = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.warns(SingularNeighborhoodWarning):
        w = lle_weights(np.array([0.0, 1.0]), nb, reg=0.0)
    np.testing.assert_allclose(w, [0.5, 0.5])


def test_lle_weights_sum_to_one_fuzz():
    rng = np.random.default_rng(2)
    q = rng.standard_normal((10_000, 6)) * rng.uniform(1e-3, 1e3, (10_000, 1))
    nb = q[:, None, :] + rng.standard_normal((10_000, 2, 6)) * rng.uniform(1e-6, 10, (10_000, 1, 1))
    w = lle_weights_batch(q, nb, 1e-3)
    assert np.all(np.isfinite(w)) and np.abs(w.sum(1) - 1).max() <= 1e-9


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.booleans())
def test_nearest_matches_linear_scan(seed, k, coarse):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((60, 4))
    if coarse:
        # integer grid: plenty of exact distance ties
        f = np.round(f * 2)
    q = np.concatenate([f[:5], rng.standard_normal((10, 4))])
    got = nearest(f, q, k, chunk=7)
    for i, qi in enumerate(q):
        d = ((f - qi) ** 2).sum(1)
        want = np.lexsort((np.arange(len(f)), d))[:k]
        assert got[i].tolist() == want.tolist()


def test_nearest_rejects_bad_k():
    with pytest.raises(InvalidInputError):
        nearest(np.zeros((3, 2)), np.zeros((1, 2)), 4)


@pytest.fixture(scope="module")
def trained():
    rng = np.random.default_rng(3)
    x = np.concatenate([blocky(rng, 120, 16, 1, 4), blocky(rng, 120, 16, 1, 2)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        enh = train_enhancer(x, EnhancerConfig(k_dc=4, k_ac=2, em=EmOptions(max_iters=20, n_init=1)))
    return x, enh


def test_pairs_are_exact(trained):
    x, enh = trained
    e, r = booster_pairs(x[:30], enh, child_rngs(0, 64, 30))
    assert np.array_equal(e.astype(np.float64) + r, x[:30].astype(np.float64))


def test_exact_match_retrieval(trained):
    x, enh = trained
    stage = train_booster(x, enh, BoosterConfig(pca_dims=None))
    rngs = child_rngs(0, 64, len(x))
    e, _ = booster_pairs(x[:20], enh, rngs[:20])
    out = boost_batch(stage, e)
    mask = canny_mask(e)
    on = np.broadcast_to(mask[..., None] > 0, out.shape)
    assert np.abs(out - x[:20])[on].max() <= 1e-3
    assert np.array_equal(out[~on], e[~on])


def test_pca_features_and_gating(trained):
    x, enh = trained
    stage = train_booster(x, enh, BoosterConfig(pca_dims=16))
    assert stage.features.shape == (len(x), 16) and stage.k == 2
    comps = stage.pca_components.astype(np.float64)
    np.testing.assert_allclose(comps @ comps.T, np.eye(16), atol=1e-5)
    const = np.full((16, 16, 1), 0.4, dtype=np.float32)
    assert np.array_equal(boost(stage, const), const)
    rng = np.random.default_rng(4)
    q = rng.random((25, 16, 16, 1)).astype(np.float32)
    out = boost_batch(stage, q)
    off = canny_mask(q) == 0
    assert np.array_equal(out[..., 0][off], q[..., 0][off])
    assert np.array_equal(out, boost_batch(stage, q))
    assert np.array_equal(boost(stage, q[3], np.random.default_rng(99)), out[3])


def test_single_exemplar(trained):
    x, enh = trained
    stage = train_booster(x[:1], enh)
    assert stage.size == 1 and stage.k == 1
    q = np.random.default_rng(5).random((3, 16, 16, 1)).astype(np.float32)
    out = boost_batch(stage, q)
    mask = canny_mask(q)[..., None] > 0
    want = np.where(mask, np.clip(q + stage.residuals[0].reshape(16, 16, 1), 0, 1), q)
    np.testing.assert_allclose(out, want, atol=1e-7)


def test_exemplar_cap(trained):
    x, enh = trained
    stage = train_booster(x, enh, BoosterConfig(max_exemplars=50, seed=3))
    assert stage.size == 50
    again = train_booster(x, enh, BoosterConfig(max_exemplars=50, seed=3))
    assert np.array_equal(stage.features, again.features)


def test_errors(trained):
    x, enh = trained
    with pytest.raises(InvalidInputError):
        train_booster(x[:0], enh)
    with pytest.raises(InvalidInputError):
        train_booster(box_downsample(x[:4], 2), enh)
    with pytest.raises(InvalidInputError):
        BoosterConfig(k=0)
    with pytest.raises(InvalidStateError):
        boost_batch(None, x[:1])
    stage = train_booster(x[:10], enh)
    with pytest.raises(InvalidInputError):
        boost(stage, np.zeros((8, 8, 1)))
    with pytest.raises(InvalidInputError):
        BoosterStage(16, 1, stage.features, stage.residuals[:5], stage.pca_mean, stage.pca_components)
