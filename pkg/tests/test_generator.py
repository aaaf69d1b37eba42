import numpy as np
import pytest

from pager.errors import InvalidInputError
from pager.generator import EmOptions, train_core, generate_core
from pager.saab import DegenerateDataWarning


def test_single_image_reproduced():
    img = np.random.default_rng(0).random((1, 4, 4, 3))
    with pytest.warns(DegenerateDataWarning):
        g = train_core(img, 2, 1)
    out = generate_core(g, np.random.default_rng(1), 5)
    assert np.abs(out - img).max() <= 1e-3
    # variances sit at the positive floor, so samples agree to ~sqrt(floor)
    np.testing.assert_allclose(out[0], out[4], atol=1e-5)


def test_shapes_and_determinism():
    x = np.random.default_rng(2).random((200, 4, 4, 3))
    g = train_core(x, 2, 5, EmOptions(max_iters=30, n_init=1))
    assert g.core_dims == (4, 4, 3) and g.side == 4 and g.model.dim == 48
    a = generate_core(g, np.random.default_rng(3), 32)
    b = generate_core(g, np.random.default_rng(3), 32)
    assert np.array_equal(a, b) and a.shape == (32, 4, 4, 3)
    assert a.min() >= 0 and a.max() <= 1
    rngs = [np.random.default_rng(i) for i in range(4)]
    assert generate_core(g, rngs).shape == (4, 4, 4, 3)
    assert generate_core(g, []).shape == (0, 4, 4, 3)


def test_mixture_mean_matches_training_mean():
    x = np.random.default_rng(4).random((300, 4, 4, 1))
    g = train_core(x, 2, 6, EmOptions(max_iters=50, n_init=1))
    feats = g.cascade.forward(x)
    # Saab features are centred, so measure the gap against the feature spread
    m, scale = feats.mean(0), np.linalg.norm(feats.std(0))
    assert np.linalg.norm(g.model.mixture_mean() - m) <= 1e-4 * scale


def test_wrong_side_rejected():
    with pytest.raises(InvalidInputError):
        train_core(np.zeros((3, 8, 8, 1)), 2, 1)
    with pytest.raises(InvalidInputError):
        generate_core(train_core(np.random.default_rng(5).random((20, 2, 2, 1)), 1, 1),
                      [np.random.default_rng(0)], count=2)


@pytest.mark.slow
def test_mnist_core_mean(mnist_train):
    from pager.imageops import box_downsample, pad_center
    x = pad_center(mnist_train.images[:1000], 32, 32)
    x16 = box_downsample(x)
    g = train_core(x16, 4, 20, EmOptions(max_iters=60, n_init=1))
    out = generate_core(g, np.random.default_rng(6), 1000)
    assert np.abs(out.mean(0) - x16.mean(0)).max() <= 0.1
