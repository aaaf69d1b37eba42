import gzip
import logging
import struct

import numpy as np
import pytest
from PIL import Image

from pager.datasets import (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, LabeledImageSet, load_celeba_attrs, load_idx,
                            load_image_dir, load_mnist_dir, read_celeba_attrs, read_idx)
from pager.errors import DataFormatError, InvalidInputError

PIXELS = np.array([[[0, 255, 128], [1, 2, 3]], [[10, 20, 30], [250, 251, 252]]], dtype=np.uint8)


def idx_bytes(magic, arr):
    return struct.pack(">I", magic) + struct.pack(">" + "I" * arr.ndim, *arr.shape) + arr.tobytes()


@pytest.fixture
def idx_dir(tmp_path):
    (tmp_path / "train-images-idx3-ubyte").write_bytes(idx_bytes(IDX_IMAGES_MAGIC, PIXELS))
    (tmp_path / "train-labels-idx1-ubyte").write_bytes(idx_bytes(IDX_LABELS_MAGIC, np.array([7, 3], np.uint8)))
    return tmp_path


def test_two_image_fixture_exact(idx_dir):
    s = load_mnist_dir(idx_dir)
    assert s.images.shape == (2, 2, 3, 1) and s.images.dtype == np.float32
    np.testing.assert_array_equal(s.images[..., 0], PIXELS.astype(np.float32) / np.float32(255))
    assert s.labels.tolist() == [7, 3]
    assert s.images.min() >= 0 and s.images.max() <= 1


def test_gzip_and_t10k(tmp_path):
    (tmp_path / "t10k-images-idx3-ubyte.gz").write_bytes(gzip.compress(idx_bytes(IDX_IMAGES_MAGIC, PIXELS)))
    (tmp_path / "t10k-labels-idx1-ubyte.gz").write_bytes(
        gzip.compress(idx_bytes(IDX_LABELS_MAGIC, np.array([1, 2], np.uint8))))
    s = load_mnist_dir(tmp_path, "t10k")
    assert s.labels.tolist() == [1, 2] and len(s) == 2


def test_wrong_magic_and_lengths(tmp_path):
    p = tmp_path / "labels"
    p.write_bytes(idx_bytes(IDX_IMAGES_MAGIC, PIXELS))
    with pytest.raises(DataFormatError, match="magic"):
        read_idx(p, IDX_LABELS_MAGIC)
    good = idx_bytes(IDX_IMAGES_MAGIC, PIXELS)
    for bad in (good[:-1], good + b"\0", good[:3], good[:9]):
        p.write_bytes(bad)
        with pytest.raises(DataFormatError):
            read_idx(p, IDX_IMAGES_MAGIC)


def test_label_count_mismatch(tmp_path):
    (tmp_path / "i").write_bytes(idx_bytes(IDX_IMAGES_MAGIC, PIXELS))
    (tmp_path / "l").write_bytes(idx_bytes(IDX_LABELS_MAGIC, np.array([1], np.uint8)))
    with pytest.raises(DataFormatError):
        load_idx(tmp_path / "i", tmp_path / "l")
    with pytest.raises(DataFormatError):
        load_mnist_dir(tmp_path)  # no train-* files here


def test_official_mnist_shape(mnist_train):
    assert mnist_train.images.shape == (60000, 28, 28, 1)
    assert mnist_train.labels.shape == (60000,)


def _png(path, arr):
    Image.fromarray(arr).save(path)


def test_image_dir_sorting_cropping_and_skipping(tmp_path, caplog):
    rng = np.random.default_rng(0)
    a = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    b = rng.integers(0, 256, (40, 48, 3), dtype=np.uint8)
    _png(tmp_path / "b.png", b)
    _png(tmp_path / "a.png", a)
    (tmp_path / "c.png").write_bytes(b"not an image")
    (tmp_path / "notes.txt").write_text("ignored")
    with caplog.at_level(logging.WARNING):
        s = load_image_dir(tmp_path, 32)
    assert s.names == ["a.png", "b.png"] and s.skipped == ["c.png"]
    np.testing.assert_array_equal(s.images[0], a.astype(np.float32) / np.float32(255))
    want_b = Image.fromarray(b).crop((4, 0, 44, 40)).resize((32, 32), Image.LANCZOS)
    np.testing.assert_array_equal(s.images[1], np.asarray(want_b, np.float32) / np.float32(255))
    assert "c.png" in caplog.text
    g = load_image_dir(tmp_path, 16, grayscale=True)
    assert g.images.shape == (2, 16, 16, 1)


def test_image_dir_errors(tmp_path):
    with pytest.raises(InvalidInputError):
        load_image_dir(tmp_path, 32)
    with pytest.raises(InvalidInputError):
        load_image_dir(tmp_path / "missing", 32)


ATTRS = """3
5_o_Clock_Shadow Male Smiling Young
000001.jpg -1  1 -1  1
000002.jpg  1 -1  1 -1
000003.jpg -1 -1 -1  1
"""


def test_celeba_attrs_fixture(tmp_path):
    p = tmp_path / "list_attr_celeba.txt"
    p.write_text(ATTRS)
    files, m = read_celeba_attrs(p, ("Smiling", "Male"))
    assert files == ["000001.jpg", "000002.jpg", "000003.jpg"]
    assert m.tolist() == [[-1, 1], [1, -1], [-1, -1]]
    aligned = load_celeba_attrs(p, ("Young",), names=["000003.jpg", "000001.jpg"])
    assert aligned.tolist() == [[1], [1]]
    with pytest.raises(InvalidInputError, match="available"):
        read_celeba_attrs(p, ("Bangs",))
    with pytest.raises(DataFormatError):
        load_celeba_attrs(p, ("Young",), names=["999.jpg"])
    p.write_text(ATTRS.replace("3\n", "4\n", 1))
    with pytest.raises(DataFormatError):
        read_celeba_attrs(p, ("Young",))
    p.write_text(ATTRS.replace(" 1 -1  1 -1", " 1 -1  2 -1"))
    with pytest.raises(DataFormatError):
        read_celeba_attrs(p, ("Smiling",))


def test_labeled_set_lengths():
    with pytest.raises(InvalidInputError):
        LabeledImageSet(np.zeros((2, 2, 2, 1)), labels=np.zeros(3))
    s = LabeledImageSet(np.zeros((3, 2, 2, 1)), labels=np.arange(3), names=["x", "y", "z"])
    sub = s.subset([2, 0])
    assert sub.labels.tolist() == [2, 0] and sub.names == ["z", "x"]
