"""Loaders for MNIST-style IDX files, image directories and CelebA attribute lists."""
from __future__ import annotations

import gzip
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, InvalidInputError

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CELEBA_ATTRIBUTES = ("Male", "Smiling", "Blond_Hair", "Black_Hair", "Wearing_Lipstick", "Bangs", "Young")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}


@dataclass
class LabeledImageSet:
    images: np.ndarray  # (M, H, W, C) float32 in [0, 1]
    labels: np.ndarray | None = None
    attrs: np.ndarray | None = None
    names: list[str] | None = None
    skipped: list[str] = field(default_factory=list)

    def __post_init__(self):
        m = len(self.images)
        for name in ("labels", "attrs", "names"):
            v = getattr(self, name)
            if v is not None and len(v) != m:
                raise InvalidInputError(f"{name} has {len(v)} entries for {m} images")

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, idx) -> "LabeledImageSet":
        idx = np.asarray(idx)
        return LabeledImageSet(
            self.images[idx],
            None if self.labels is None else self.labels[idx],
            None if self.attrs is None else self.attrs[idx],
            None if self.names is None else [self.names[i] for i in idx],
        )


def _read_bytes(path) -> bytes:
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as f:
        return f.read()


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Parse a big-endian IDX file of unsigned bytes."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise DataFormatError(f"{path}: file too short for an IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise DataFormatError(f"{path}: wrong magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    expected = int(np.prod(dims, dtype=np.int64))
    payload = len(raw) - header
    if payload != expected:
        raise DataFormatError(f"{path}: header declares {dims} ({expected} bytes) but payload has {payload}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path=None) -> LabeledImageSet:
    """MNIST/Fashion-MNIST IDX pair; pixels scaled by 1/255."""
    pix = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = None
    if labels_path is not None:
        labels = read_idx(labels_path, IDX_LABELS_MAGIC).astype(np.int64)
        if len(labels) != len(pix):
            raise DataFormatError(f"{len(pix)} images but {len(labels)} labels")
    images = (pix.astype(np.float32) / np.float32(255.0))[..., None]
    return LabeledImageSet(images, labels)


def find_idx_pair(directory, split: str = "train") -> tuple[Path, Path]:
    """Locate ``{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`` in a directory."""
    d = Path(directory)
    prefix = "train" if split == "train" else "t10k"
    found = []
    for kind in ("images-idx3-ubyte", "labels-idx1-ubyte"):
        for cand in (f"{prefix}-{kind}", f"{prefix}-{kind}.gz", f"{prefix}-{kind.replace('-ubyte', '.ubyte')}"):
            if (d / cand).exists():
                found.append(d / cand)
                break
        else:
            raise DataFormatError(f"no {prefix}-{kind} file in {d}")
    return found[0], found[1]


def load_mnist_dir(directory, split: str = "train") -> LabeledImageSet:
    return load_idx(*find_idx_pair(directory, split))


def _center_square(img):
    w, h = img.size
    s = min(w, h)
    left, top = (w - s) // 2, (h - s) // 2
    return img.crop((left, top, left + s, top + s))


def load_image_dir(path, side: int, grayscale: bool = False) -> LabeledImageSet:
    """Every decodable image in ``path`` (sorted by filename bytes), center-cropped and Lanczos-resized."""
    from PIL import Image

    d = Path(path)
    if not d.is_dir():
        raise InvalidInputError(f"{d} is not a directory")
    names = sorted((p.name for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES),
                   key=lambda s: os.fsencode(s))
    images, kept, skipped = [], [], []
    mode = "L" if grayscale else "RGB"
    for name in names:
        try:
            with Image.open(d / name) as im:
                im = _center_square(im.convert(mode))
                if im.size != (side, side):
                    im = im.resize((side, side), Image.LANCZOS)
                arr = np.asarray(im, dtype=np.float32) / np.float32(255.0)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s: %s", name, exc)
            skipped.append(name)
            continue
        images.append(arr[..., None] if arr.ndim == 2 else arr)
        kept.append(name)
    if not images:
        raise InvalidInputError(f"no readable images in {d}")
    return LabeledImageSet(np.stack(images), names=kept, skipped=skipped)


def read_celeba_attrs(path, selected=CELEBA_ATTRIBUTES) -> tuple[list[str], np.ndarray]:
    """``(filenames, M x T matrix of +/-1)`` for the ``selected`` columns, in file order."""
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2:
        raise DataFormatError(f"{path}: missing count or header line")
    try:
        count = int(lines[0].split()[0])
    except (ValueError, IndexError) as exc:
        raise DataFormatError(f"{path}: first line must be the image count") from exc
    header = lines[1].split()
    missing = [a for a in selected if a not in header]
    if missing:
        raise InvalidInputError(f"unknown attribute(s) {missing}; available: {', '.join(header)}")
    cols = [header.index(a) for a in selected]
    files, rows = [], []
    for ln in lines[2:]:
        parts = ln.split()
        if not parts:
            continue
        if len(parts) != len(header) + 1:
            raise DataFormatError(f"{path}: row for {parts[0]} has {len(parts) - 1} values, expected {len(header)}")
        vals = [int(parts[1 + c]) for c in cols]
        if any(v not in (-1, 1) for v in vals):
            raise DataFormatError(f"{path}: non +/-1 attribute value in row {parts[0]}")
        files.append(parts[0])
        rows.append(vals)
    if len(rows) != count:
        raise DataFormatError(f"{path}: header says {count} rows, found {len(rows)}")
    return files, np.array(rows, dtype=np.int8).reshape(-1, len(cols))


def load_celeba_attrs(path, selected=CELEBA_ATTRIBUTES, names: list[str] | None = None) -> np.ndarray:
    """``M x T`` attribute matrix; rows follow ``names`` (image filenames) when given, else file order."""
    files, mat = read_celeba_attrs(path, selected)
    if names is None:
        return mat
    index = {f: i for i, f in enumerate(files)}
    try:
        return mat[[index[n] for n in names]]
    except KeyError as exc:
        raise DataFormatError(f"no attribute row for image {exc.args[0]}") from exc
