"""Single-file model archive.

Layout::

    b"PAGERMDL"  u16 version  u32 manifest_len  manifest  arrays  u32 crc32

All integers are little-endian.  The manifest is UTF-8 ``key=value`` lines.
Lines ``@name=shape`` declare the float32 arrays stored back to back after
the manifest, in manifest order (``shape`` is comma separated, empty for a
scalar).  The CRC32 covers every byte before it.  Nothing time-dependent is
written, so saving the same model twice gives identical bytes.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .attributes import AttributeFamily, AttributeRouter
from .booster import BoosterStage
from .enhancer import EnhancerStage, WindowModel
from .errors import CorruptArchiveError, UnsupportedVersionError
from .generator import CoreGenerator
from .gmm import Gmm
from .imageops import CannyConfig
from .pipeline import PagerModel
from .saab import SaabCascade, SaabLayer

MAGIC = b"PAGERMDL"
VERSION = 1
_HEAD = struct.Struct("<8sHI")


class _Writer:
    def __init__(self):
        self.lines: list[str] = []
        self.arrays: list[np.ndarray] = []

    def put(self, key: str, value) -> None:
        if isinstance(value, bool):
            value = int(value)
        if isinstance(value, float):
            value = repr(value)
        text = str(value)
        if "\n" in text or "\n" in key or "=" in key:
            raise ValueError(f"manifest entry {key!r} is not representable")
        self.lines.append(f"{key}={text}")

    def arr(self, key: str, a) -> None:
        a = np.asarray(a)
        if a.dtype != np.float32:
            raise ValueError(f"array {key} must already be float32, got {a.dtype}")
        self.lines.append(f"@{key}={','.join(str(s) for s in a.shape)}")
        self.arrays.append(np.ascontiguousarray(a, dtype="<f4"))


class _Reader:
    def __init__(self, scalars: dict, arrays: dict):
        self.s = scalars
        self.a = arrays

    def get(self, key: str) -> str:
        try:
            return self.s[key]
        except KeyError:
            raise CorruptArchiveError(f"manifest lacks {key}") from None

    def int(self, key: str) -> int:
        return int(self.get(key))

    def float(self, key: str) -> float:
        return float(self.get(key))

    def bool(self, key: str) -> bool:
        return self.get(key) == "1"

    def arr(self, key: str) -> np.ndarray:
        try:
            return self.a[key]
        except KeyError:
            raise CorruptArchiveError(f"archive lacks array {key}") from None


# writers ---------------------------------------------------------------

def _w_cascade(w: _Writer, p: str, c: SaabCascade):
    w.put(f"{p}.input_dims", ",".join(str(v) for v in c.input_dims))
    w.put(f"{p}.layers", len(c.layers))
    for i, layer in enumerate(c.layers):
        q = f"{p}.l{i}"
        w.put(f"{q}.in_channels", layer.in_channels)
        w.put(f"{q}.channelwise", layer.channelwise)
        for name in ("mean", "basis", "energies", "dc_energy"):
            w.arr(f"{q}.{name}", getattr(layer, name))


def _w_gmm(w: _Writer, p: str, g: Gmm):
    w.put(f"{p}.var_floor", float(g.var_floor))
    w.arr(f"{p}.weights", g.weights32)
    w.arr(f"{p}.means", g.means32)
    w.arr(f"{p}.variances", g.variances32)


def _w_canny(w: _Writer, p: str, c: CannyConfig):
    w.put(f"{p}.low", float(c.low))
    w.put(f"{p}.high", float(c.high))
    w.put(f"{p}.sigma", float(c.sigma))
    w.put(f"{p}.dilate_radius", c.dilate_radius)


def _w_enhancer(w: _Writer, p: str, e: EnhancerStage):
    w.put(f"{p}.resolution", e.resolution)
    w.put(f"{p}.channels", e.channels)
    w.put(f"{p}.recursion_floor", e.recursion_floor)
    w.put(f"{p}.dc_weighted", e.dc_weighted)
    _w_canny(w, f"{p}.mask", e.mask)
    w.put(f"{p}.levels", len(e.levels))
    for i, lv in enumerate(e.levels):
        q = f"{p}.v{i}"
        w.put(f"{q}.side", lv.side)
        _w_cascade(w, f"{q}.dc_cascade", lv.dc_cascade)
        _w_gmm(w, f"{q}.g_dc", lv.g_dc)
        _w_cascade(w, f"{q}.ac_cascade", lv.ac_cascade)
        for k, g in enumerate(lv.g_ac):
            _w_gmm(w, f"{q}.g_ac{k}", g)


def _w_booster(w: _Writer, p: str, b: BoosterStage):
    w.put(f"{p}.resolution", b.resolution)
    w.put(f"{p}.channels", b.channels)
    w.put(f"{p}.k", b.k)
    w.put(f"{p}.reg", float(b.reg))
    _w_canny(w, f"{p}.mask", b.mask)
    w.put(f"{p}.pca", b.pca_components is not None)
    w.arr(f"{p}.features", b.features)
    w.arr(f"{p}.residuals", b.residuals)
    if b.pca_components is not None:
        w.arr(f"{p}.pca_mean", b.pca_mean)
        w.arr(f"{p}.pca_components", b.pca_components)


def _w_model(w: _Writer, p: str, m: PagerModel):
    w.put(f"{p}.cores", len(m.cores))
    w.put(f"{p}.classes", "" if m.classes is None else ",".join(str(c) for c in m.classes))
    w.put(f"{p}.has_classes", m.classes is not None)
    w.put(f"{p}.crop", "" if m.crop is None else m.crop)
    w.put(f"{p}.metadata", json.dumps(m.metadata, sort_keys=True))
    for i, core in enumerate(m.cores):
        _w_cascade(w, f"{p}.core{i}.cascade", core.cascade)
        _w_gmm(w, f"{p}.core{i}.gmm", core.model)
    w.put(f"{p}.stages", len(m.enhancers))
    w.put(f"{p}.boosted", bool(m.boosters))
    for i, e in enumerate(m.enhancers):
        _w_enhancer(w, f"{p}.enh{i}", e)
        if m.boosters:
            _w_booster(w, f"{p}.boost{i}", m.boosters[i])


# readers ---------------------------------------------------------------

def _r_cascade(r: _Reader, p: str) -> SaabCascade:
    dims = tuple(int(v) for v in r.get(f"{p}.input_dims").split(","))
    layers = []
    for i in range(r.int(f"{p}.layers")):
        q = f"{p}.l{i}"
        layers.append(SaabLayer(r.arr(f"{q}.mean"), r.arr(f"{q}.basis"), r.arr(f"{q}.energies"),
                                r.arr(f"{q}.dc_energy"), r.int(f"{q}.in_channels"), r.bool(f"{q}.channelwise")))
    return SaabCascade(tuple(layers), dims)


def _r_gmm(r: _Reader, p: str) -> Gmm:
    return Gmm(r.arr(f"{p}.weights"), r.arr(f"{p}.means"), r.arr(f"{p}.variances"), r.float(f"{p}.var_floor"))


def _r_canny(r: _Reader, p: str) -> CannyConfig:
    return CannyConfig(r.float(f"{p}.low"), r.float(f"{p}.high"), r.float(f"{p}.sigma"),
                       r.int(f"{p}.dilate_radius"))


def _r_enhancer(r: _Reader, p: str) -> EnhancerStage:
    levels = []
    for i in range(r.int(f"{p}.levels")):
        q = f"{p}.v{i}"
        g_dc = _r_gmm(r, f"{q}.g_dc")
        g_ac = tuple(_r_gmm(r, f"{q}.g_ac{k}") for k in range(g_dc.K))
        levels.append(WindowModel(r.int(f"{q}.side"), _r_cascade(r, f"{q}.dc_cascade"), g_dc,
                                  _r_cascade(r, f"{q}.ac_cascade"), g_ac))
    return EnhancerStage(r.int(f"{p}.resolution"), r.int(f"{p}.channels"), tuple(levels),
                         _r_canny(r, f"{p}.mask"), r.int(f"{p}.recursion_floor"), r.bool(f"{p}.dc_weighted"))


def _r_booster(r: _Reader, p: str) -> BoosterStage:
    pca = r.bool(f"{p}.pca")
    return BoosterStage(r.int(f"{p}.resolution"), r.int(f"{p}.channels"), r.arr(f"{p}.features"),
                        r.arr(f"{p}.residuals"), r.arr(f"{p}.pca_mean") if pca else None,
                        r.arr(f"{p}.pca_components") if pca else None, r.int(f"{p}.k"), r.float(f"{p}.reg"),
                        _r_canny(r, f"{p}.mask"))


def _r_model(r: _Reader, p: str) -> PagerModel:
    cores = tuple(CoreGenerator(_r_cascade(r, f"{p}.core{i}.cascade"), _r_gmm(r, f"{p}.core{i}.gmm"))
                  for i in range(r.int(f"{p}.cores")))
    classes = None
    if r.bool(f"{p}.has_classes"):
        classes = tuple(int(c) for c in r.get(f"{p}.classes").split(","))
    crop = r.get(f"{p}.crop")
    n = r.int(f"{p}.stages")
    enh = tuple(_r_enhancer(r, f"{p}.enh{i}") for i in range(n))
    boost = tuple(_r_booster(r, f"{p}.boost{i}") for i in range(n)) if r.bool(f"{p}.boosted") else ()
    return PagerModel(cores, classes, enh, boost, int(crop) if crop else None,
                      json.loads(r.get(f"{p}.metadata")))


# public ----------------------------------------------------------------

def to_bytes(obj: PagerModel | AttributeFamily) -> bytes:
    w = _Writer()
    if isinstance(obj, PagerModel):
        w.put("kind", "model")
        _w_model(w, "m", obj)
    elif isinstance(obj, AttributeFamily):
        w.put("kind", "attribute_family")
        w.put("names", ",".join(obj.attribute_names))
        w.put("router.model_ids", ",".join(obj.router.model_ids))
        w.arr("router.centers", obj.router.centers.astype(np.float32))
        w.put("models", len(obj.models))
        for j, m in enumerate(obj.models):
            _w_model(w, f"m{j}", m)
    else:
        raise TypeError(f"cannot archive {type(obj).__name__}")
    manifest = ("\n".join(w.lines) + "\n").encode("utf-8")
    body = _HEAD.pack(MAGIC, VERSION, len(manifest)) + manifest + b"".join(a.tobytes() for a in w.arrays)
    return body + struct.pack("<I", zlib.crc32(body))


def from_bytes(data: bytes) -> PagerModel | AttributeFamily:
    if len(data) < _HEAD.size + 4:
        raise CorruptArchiveError("file too short for a model archive")
    magic, version, mlen = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise CorruptArchiveError("not a model archive (bad magic)")
    if version != VERSION:
        raise UnsupportedVersionError(f"archive version {version}; this build reads version {VERSION}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise CorruptArchiveError("checksum mismatch (truncated or modified file)")
    start = _HEAD.size
    try:
        text = data[start:start + mlen].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptArchiveError("manifest is not UTF-8") from exc
    scalars, arrays = {}, {}
    off = start + mlen
    end = len(data) - 4
    for line in text.splitlines():
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise CorruptArchiveError(f"bad manifest line {line!r}")
        if key.startswith("@"):
            try:
                shape = tuple(int(s) for s in val.split(",")) if val else ()
            except ValueError:
                raise CorruptArchiveError(f"bad shape in manifest line {line!r}") from None
            if any(s < 0 for s in shape):
                raise CorruptArchiveError(f"negative dimension in manifest line {line!r}")
            count = int(np.prod(shape, dtype=np.int64))
            if off + 4 * count > end:
                raise CorruptArchiveError(f"array {key[1:]} runs past the end of the file")
            arrays[key[1:]] = np.frombuffer(data, dtype="<f4", count=count, offset=off).astype(np.float32) \
                .reshape(shape)
            off += 4 * count
        else:
            scalars[key] = val
    if off != end:
        raise CorruptArchiveError(f"{end - off} unexpected trailing bytes")
    r = _Reader(scalars, arrays)
    kind = r.get("kind")
    try:
        if kind == "model":
            return _r_model(r, "m")
        if kind == "attribute_family":
            ids = tuple(r.get("router.model_ids").split(","))
            router = AttributeRouter(r.arr("router.centers").astype(np.float64), ids)
            models = tuple(_r_model(r, f"m{j}") for j in range(r.int("models")))
            names = tuple(n for n in r.get("names").split(",") if n)
            return AttributeFamily(router, models, names)
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise CorruptArchiveError(f"inconsistent archive: {exc}") from exc
    raise CorruptArchiveError(f"unknown archive kind {kind!r}")


def save(obj: PagerModel | AttributeFamily, path) -> None:
    Path(path).write_bytes(to_bytes(obj))


def load(path) -> PagerModel | AttributeFamily:
    return from_bytes(Path(path).read_bytes())
