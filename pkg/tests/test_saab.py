import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pager.errors import InvalidInputError
from pager.saab import (DegenerateDataWarning, decorrelation_ratio, fit_cascade, fit_stage, forward_stage,
                        inverse_stage)


def test_constant_patches_live_on_dc():
    x = np.full((50, 4), 0.3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateDataWarning)
        st_ = fit_stage(x + np.linspace(0, 1, 50)[:, None])  # constant within each patch
    assert np.allclose(st_.energies, 0, atol=1e-6)
    np.testing.assert_allclose(st_.basis[0], 0.5, atol=1e-7)
    img = np.full((2, 2, 1), 0.7)
    c = forward_stage(st_, img)[0, 0]
    assert c[0] == pytest.approx((0.7 - float(st_.mean[0])) * 2.0, abs=1e-6)
    assert np.abs(c[1:]).max() < 1e-6


def test_two_point_dataset_gives_principal_direction():
    v = np.array([1.0, -2.0, 0.5, 0.5])  # zero DC component
    with pytest.warns(DegenerateDataWarning):
        st_ = fit_stage(np.stack([v, -v]))
    row = st_.basis[1].astype(np.float64)
    assert abs(abs(row @ v) / np.linalg.norm(v) - 1.0) < 1e-6


def test_random_basis_diagonalises_covariance():
    x = np.random.default_rng(0).standard_normal((1000, 12))
    st_ = fit_stage(x)
    b = st_.basis.astype(np.float64)
    # orthonormal rows, DC row uniform
    np.testing.assert_allclose(b @ b.T, np.eye(12), atol=1e-5)
    np.testing.assert_allclose(b[0], 1 / np.sqrt(12), atol=1e-7)
    assert np.all(np.diff(st_.energies) <= 0) and np.all(st_.energies >= 0)
    ac = b[1:]
    cov = np.cov(x, rowvar=False, bias=True)
    m = ac @ cov @ ac.T
    off = m - np.diag(np.diag(m))
    assert np.abs(off).max() <= 1e-4 * st_.energies[0]


def test_energy_preservation_and_inverse_stage():
    rng = np.random.default_rng(1)
    st_ = fit_stage(rng.random((200, 12)), in_channels=3)
    img = rng.random((4, 4, 3))
    coeffs = forward_stage(st_, img)
    assert coeffs.shape == (2, 2, 12)
    np.testing.assert_allclose(inverse_stage(st_, coeffs), img, atol=1e-5)
    patch = img[:2, :2].reshape(-1)
    want = np.sum((patch - st_.mean) ** 2)
    assert np.sum(coeffs[0, 0] ** 2) == pytest.approx(want, rel=1e-4)
    # zero coefficients give back the mean patch; DC-only coefficients a constant patch
    np.testing.assert_allclose(inverse_stage(st_, np.zeros((1, 1, 12))).reshape(-1), st_.mean, atol=1e-7)
    dc_only = np.zeros((1, 1, 12))
    dc_only[..., 0] = 1.0
    delta = inverse_stage(st_, dc_only).reshape(-1) - st_.mean
    np.testing.assert_allclose(delta, delta[0], atol=1e-6)
    # random coefficients: isometry
    c = rng.standard_normal((1, 1, 12))
    d = inverse_stage(st_, c).reshape(-1) - st_.mean
    assert np.linalg.norm(d) == pytest.approx(np.linalg.norm(c), rel=1e-4)


def test_stage_rejects_bad_dims():
    st_ = fit_stage(np.random.default_rng(2).random((20, 4)))
    with pytest.raises(InvalidInputError):
        forward_stage(st_, np.zeros((3, 4, 1)))
    with pytest.raises(InvalidInputError):
        forward_stage(st_, np.zeros((4, 4, 2)))
    with pytest.raises(InvalidInputError):
        inverse_stage(st_, np.zeros((1, 1, 5)))
    with pytest.raises(InvalidInputError):
        fit_stage(np.zeros((1, 4)))
    with pytest.raises(InvalidInputError):
        fit_stage(np.zeros((5, 6)))


def test_cascade_shapes_and_errors():
    rng = np.random.default_rng(3)
    one = fit_cascade(rng.random((30, 2, 2, 1)), 1)
    assert one.output_dim == 4 and one.num_stages == 1
    c = fit_cascade(rng.random((40, 4, 4, 3)), 2)
    assert c.output_dim == 48
    assert c.forward(rng.random((4, 4, 3))).shape == (48,)
    with pytest.raises(InvalidInputError):
        fit_cascade(np.zeros((0, 4, 4, 3)), 2)
    with pytest.raises(InvalidInputError):
        fit_cascade(rng.random((5, 6, 6, 1)), 2)
    with pytest.raises(InvalidInputError):
        c.inverse(np.zeros(47))
    with pytest.raises(InvalidInputError):
        c.forward(rng.random((8, 8, 3)))


def test_cascade_round_trip_held_out():
    rng = np.random.default_rng(4)
    c = fit_cascade(rng.random((64, 32, 32, 3)), 5)
    held = rng.random((64, 32, 32, 3))
    assert np.abs(c.inverse(c.forward(held)) - held).max() <= 1e-4


def test_constant_images_differ_only_in_dc_path():
    rng = np.random.default_rng(5)
    c = fit_cascade(rng.random((50, 8, 8, 1)), 3)
    a = c.forward(np.zeros((8, 8, 1)))
    b = c.forward(np.full((8, 8, 1), 0.6))
    diff = np.abs(a - b) > 1e-5
    # the only coordinate reached purely through DC rows is the first channel of the final map
    assert np.flatnonzero(diff).tolist() == [0]


def test_fit_is_deterministic():
    x = np.random.default_rng(6).random((30, 8, 8, 3))
    a, b = fit_cascade(x, 3), fit_cascade(x.copy(), 3)
    for la, lb in zip(a.layers, b.layers):
        assert np.array_equal(la.basis, lb.basis) and np.array_equal(la.mean, lb.mean)


def test_decorrelation_on_training_data():
    x = np.random.default_rng(7).random((200, 16, 16, 3))
    c = fit_cascade(x, 4)
    assert max(decorrelation_ratio(c, x)) <= 1e-3


def test_degenerate_training_set_still_invertible():
    x = np.zeros((3, 4, 4, 1))
    with pytest.warns(DegenerateDataWarning):
        c = fit_cascade(x, 2)
    for layer in c.layers:
        b = layer.basis.astype(np.float64)
        np.testing.assert_allclose(b @ np.swapaxes(b, -1, -2), np.broadcast_to(np.eye(4), b.shape), atol=1e-5)
    y = np.random.default_rng(8).random((4, 4, 1))
    np.testing.assert_allclose(c.inverse(c.forward(y)), y, atol=1e-5)


_CASCADE = fit_cascade(np.random.default_rng(9).random((80, 8, 8, 3)), 3)
unit_images = arrays(np.float64, (8, 8, 3), elements=st.floats(0, 1))


@given(unit_images)
def test_round_trip_property(img):
    assert np.abs(_CASCADE.inverse(_CASCADE.forward(img)) - img).max() <= 1e-4


@given(unit_images, unit_images)
def test_isometry_property(a, b):
    d_img = np.linalg.norm(a - b)
    d_feat = np.linalg.norm(_CASCADE.forward(a) - _CASCADE.forward(b))
    assert d_feat == pytest.approx(d_img, rel=1e-3, abs=1e-6)
