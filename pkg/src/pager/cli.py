"""``pager`` command line: train, generate, superres, eval, sweep.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 model load failure.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import archive
from .attributes import AttributeFamily, generate_with_attributes, route, train_attribute_models
from .booster import BoosterConfig
from .datasets import CELEBA_ATTRIBUTES, load_celeba_attrs, load_image_dir, load_mnist_dir
from .enhancer import EnhancerConfig
from .errors import ArchiveError, DataFormatError, InvalidInputError
from .evaluate import CSV_HEADER, proxy_cascade, saab_frechet, training_size_sweep, write_csv
from .generator import EmOptions
from .pipeline import PagerConfig, PagerModel, generate, super_resolve, train, valid_input_sides

log = logging.getLogger("pager")

EXIT_CONFIG, EXIT_DATA, EXIT_MODEL = 2, 3, 4

ALIASES = {"gender": "male", "lipstick": "wearinglipstick", "blond": "blondhair", "black": "blackhair"}


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


def _norm(name: str) -> str:
    return "".join(ch for ch in name.lower() if ch.isalnum())


def parse_attribute_query(text: str, names=CELEBA_ATTRIBUTES) -> np.ndarray:
    """``"+smiling,0hair,-male"`` -> vector over ``names`` in {-1, 0, +1}.

    Each token is a sign (``+``, ``-`` or ``0``) then a name.  Names match
    case- and punctuation-insensitively, first exactly, then via a few aliases
    (``gender`` means ``Male``), then as a substring, in which case every
    matching attribute is set (``hair`` covers both hair colours).  Later
    tokens override earlier ones; unnamed attributes stay 0.
    """
    normed = [_norm(n) for n in names]
    q = np.zeros(len(names))
    for raw in text.split(","):
        tok = raw.strip()
        if not tok:
            continue
        sign, key = tok[0], _norm(tok[1:])
        if sign not in "+-0" or not key:
            raise InvalidInputError(f"bad attribute token {tok!r}; use +name, -name or 0name")
        key = ALIASES.get(key, key)
        hits = [i for i, n in enumerate(normed) if n == key] or [i for i, n in enumerate(normed) if key in n]
        if not hits:
            raise InvalidInputError(f"unknown attribute {tok[1:]!r}; available: {', '.join(names)}")
        q[hits] = {"+": 1.0, "-": -1.0, "0": 0.0}[sign]
    return q


def parse_grid(text: str | None, count: int) -> tuple[int, int]:
    if text is None:
        cols = max(1, math.ceil(math.sqrt(count)))
        return max(1, math.ceil(count / cols)), cols
    try:
        rows, cols = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise InvalidInputError(f"grid must look like 8x8, got {text!r}") from None
    if rows < 1 or cols < 1 or rows * cols < count:
        raise InvalidInputError(f"grid {rows}x{cols} cannot hold {count} images")
    return rows, cols


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(img: np.ndarray, path) -> None:
    from PIL import Image

    a = to_uint8(img)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    Image.fromarray(a, "L" if a.ndim == 2 else "RGB").save(path, format="PNG")


def make_grid(images: np.ndarray, rows: int, cols: int, pad: int = 1) -> np.ndarray:
    n, h, w, c = images.shape
    out = np.zeros((rows * h + (rows + 1) * pad, cols * w + (cols + 1) * pad, c), dtype=np.float32)
    for i in range(n):
        r, k = divmod(i, cols)
        y, x = pad + r * (h + pad), pad + k * (w + pad)
        out[y:y + h, x:x + w] = images[i]
    return out


def read_png(path, channels: int) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            a = np.asarray(im.convert("L" if channels == 1 else "RGB"), dtype=np.float32) / np.float32(255.0)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_DATA, f"cannot read image {path}: {exc}") from exc
    return a[..., None] if a.ndim == 2 else a


def _load_model(path):
    try:
        return archive.load(path)
    except (OSError, ArchiveError) as exc:
        raise CliError(EXIT_MODEL, f"cannot load model {path}: {exc}") from exc


def _pick_model(obj, attributes: str | None) -> tuple[PagerModel, int | None]:
    if isinstance(obj, AttributeFamily):
        if attributes is None:
            raise CliError(EXIT_CONFIG, "this model is attribute-conditioned; pass --attributes")
        names = obj.attribute_names or CELEBA_ATTRIBUTES
        j = route(obj.router, parse_attribute_query(attributes, names))
        return obj.models[j], j
    if attributes is not None:
        raise CliError(EXIT_CONFIG, "--attributes needs a model trained with --attrs")
    return obj, None


def _load_dataset(kind: str, path, resolution: int, split: str = "train", grayscale: bool = False):
    if not Path(path).exists():
        raise CliError(EXIT_DATA, f"data path {path} does not exist")
    try:
        if kind in ("mnist", "fashion"):
            return load_mnist_dir(path, split)
        return load_image_dir(path, resolution, grayscale=grayscale)
    except (InvalidInputError, DataFormatError, OSError) as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc


def _config_from_args(a) -> PagerConfig:
    preset = PagerConfig.mnist if a.dataset in ("mnist", "fashion") else PagerConfig.celeba
    base = preset()
    core_k = a.core_gmm if a.core_gmm is not None else base.core_k
    core_side = a.core_side if a.core_side is not None else base.core_side
    enh = EnhancerConfig(k_dc=a.dc_gmm, k_ac=a.ac_gmm, max_train_windows=a.max_windows,
                         em=replace(base.enhancer.em, max_iters=a.em_iters))
    boo = BoosterConfig(k=a.lle_k, pca_dims=a.pca_dims or None, max_exemplars=a.max_exemplars)
    return replace(base, resolution=a.resolution, core_side=core_side, core_k=core_k, enhancer=enh, booster=boo,
                   core_em=EmOptions(max_iters=a.em_iters), use_booster=not a.no_booster, dataset=a.dataset,
                   seed=a.seed)


def cmd_train(a) -> int:
    cfg = _config_from_args(a)
    ds = _load_dataset(a.dataset, a.data, a.resolution, grayscale=a.grayscale)
    if a.limit is not None:
        ds = ds.subset(np.arange(min(a.limit, len(ds))))
    if a.attrs:
        names = tuple(n.strip() for n in a.attr_names.split(",") if n.strip())
        if ds.names is None:
            raise CliError(EXIT_CONFIG, "--attrs needs an image-directory dataset")
        attrs = load_celeba_attrs(a.attrs, names, ds.names)
        obj = train_attribute_models(ds.images, attrs, a.attr_clusters, cfg, seed=a.seed,
                                     min_cluster=a.attr_min_cluster, attribute_names=names, labels=ds.labels)
    else:
        obj = train(ds.images, cfg, labels=ds.labels if cfg.per_class else None)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    archive.save(obj, a.out)
    print(f"wrote {a.out}")
    return 0


def cmd_generate(a) -> int:
    model, j = _pick_model(_load_model(a.model), a.attributes)
    if a.count < 1:
        raise CliError(EXIT_CONFIG, "--count must be >= 1")
    rows, cols = parse_grid(a.grid, a.count)
    res = generate(model, a.seed, a.count, labels=a.label)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    save_png(make_grid(res.images, rows, cols), out / "grid.png")
    if not a.grid_only:
        for i, img in enumerate(res.images):
            save_png(img, out / f"sample_{i:05d}.png")
    with open(out / "samples.csv", "w") as f:
        f.write("index,label,core_seed,model_id\n")
        for i in range(a.count):
            lab = "" if res.labels is None else int(res.labels[i])
            f.write(f"{i},{lab},{res.core_seeds[i]},{res.model_id}\n")
    print(f"wrote {a.count} images to {out}" + ("" if j is None else f" (attribute cluster {j})"))
    return 0


def cmd_superres(a) -> int:
    model, _ = _pick_model(_load_model(a.model), a.attributes)
    img = read_png(a.input, model.channels)
    sides = valid_input_sides(model)
    if img.shape[0] != img.shape[1] or img.shape[0] not in sides:
        raise CliError(EXIT_CONFIG, f"input is {img.shape[0]}x{img.shape[1]}; valid sides: {sides}")
    out = super_resolve(model, img, a.target, a.seed)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    save_png(out, a.out)
    print(f"wrote {a.out} ({out.shape[0]}x{out.shape[1]})")
    return 0


def cmd_eval(a) -> int:
    model, _ = _pick_model(_load_model(a.model), a.attributes)
    real = _load_dataset(a.dataset, a.real, model.output_side, split=a.split, grayscale=model.channels == 1)
    if real.images.shape[1:] != (model.output_side, model.output_side, model.channels):
        raise CliError(EXIT_DATA, f"real images are {real.images.shape[1:]}, model makes "
                                  f"{(model.output_side, model.output_side, model.channels)}")
    n = min(a.count, len(real))
    cascade = proxy_cascade(real.images[:n])
    gen = generate(model, a.seed, a.count).images
    rep = saab_frechet(real.images[:n], gen, cascade)
    size = int(model.metadata.get("train_count", 0)) or None
    write_csv([{"size": size, "proxy_frechet": rep.distance, "train_seconds": None, "seed": a.seed}], a.out)
    print(f"proxy Frechet {rep.distance:.6g} ({rep.n_real} real vs {rep.n_gen} generated, {rep.feature_source})")
    return 0


def cmd_sweep(a) -> int:
    cfg = _config_from_args(a)
    ds = _load_dataset(a.dataset, a.data, a.resolution, grayscale=a.grayscale)
    real = _load_dataset(a.dataset, a.real, a.resolution, split="t10k", grayscale=a.grayscale)
    try:
        sizes = [int(s) for s in a.sizes.split(",") if s.strip()]
    except ValueError:
        raise CliError(EXIT_CONFIG, f"bad --sizes {a.sizes!r}") from None
    rows = training_size_sweep(ds.images, ds.labels if cfg.per_class else None, sizes, cfg,
                               real.images[:a.count], count=a.count, seed=a.seed)
    write_csv(rows, a.out)
    for r in rows:
        print(f"{r.size:>7d}  proxy {r.proxy_frechet:.5g}  {r.train_seconds:.1f}s")
    return 0


def _add_model_flags(p):
    p.add_argument("--dataset", choices=["mnist", "fashion", "celeba", "dir"], default="celeba",
                   help="dataset layout; mnist/fashion read IDX files and train per-class cores")
    p.add_argument("--data", required=True, help="IDX directory or image directory")
    p.add_argument("--grayscale", action="store_true", help="read image directories as grayscale")
    p.add_argument("--resolution", type=int, default=32, help="output side (power of two)")
    p.add_argument("--core-side", type=int, default=None,
                   help="core side; default 4 (celeba/dir), 16 (mnist/fashion)")
    p.add_argument("--core-gmm", type=int, default=None,
                   help="core GMM components; default 500 (celeba/dir), 100 per class (mnist/fashion)")
    p.add_argument("--dc-gmm", type=int, default=100, help="DC GMM components per enhancer bank")
    p.add_argument("--ac-gmm", type=int, default=3, help="AC GMM components per DC cluster")
    p.add_argument("--lle-k", type=int, default=2, help="booster nearest neighbours")
    p.add_argument("--pca-dims", type=int, default=128, help="booster feature dims (0 = raw pixels)")
    p.add_argument("--max-windows", type=int, default=20000, help="enhancer training windows per depth")
    p.add_argument("--max-exemplars", type=int, default=50000, help="booster exemplar cap")
    p.add_argument("--em-iters", type=int, default=200, help="EM iteration cap for core GMMs")
    p.add_argument("--no-booster", action="store_true", help="skip the quality booster")
    p.add_argument("--seed", type=int, default=0, help="root seed")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    ap = argparse.ArgumentParser(prog="pager", description="Coarse-to-fine image generation "
                                 "with Saab features, GMMs and LLE.", formatter_class=fmt)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    ap.add_argument("--threads", type=int, default=None, help="BLAS thread cap; default leaves the library setting")
    ap.add_argument("--deterministic", action="store_true",
                    help="single BLAS thread so reductions run in a fixed order")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model", formatter_class=fmt)
    _add_model_flags(p)
    p.add_argument("--limit", type=int, default=None, help="use only the first N images")
    p.add_argument("--attrs", default=None, help="CelebA list_attr_celeba.txt for attribute-guided training")
    p.add_argument("--attr-names", default=",".join(CELEBA_ATTRIBUTES), help="attribute columns to use")
    p.add_argument("--attr-clusters", type=int, default=10, help="attribute k-means clusters")
    p.add_argument("--attr-min-cluster", type=int, default=500, help="smaller clusters are merged")
    p.add_argument("--out", default="model.pager", help="model archive path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample images", formatter_class=fmt)
    p.add_argument("--model", required=True, help="model archive")
    p.add_argument("--count", type=int, default=64, help="number of images")
    p.add_argument("--seed", type=int, default=0, help="root seed")
    p.add_argument("--grid", default=None, help="grid layout ROWSxCOLS; default near-square")
    p.add_argument("--label", type=int, default=None, help="class for per-class models; default uniform")
    p.add_argument("--attributes", default=None, help='attribute query such as "+smiling,0hair,-male"')
    p.add_argument("--grid-only", action="store_true", help="write only grid.png")
    p.add_argument("--out", default="samples", help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("superres", help="raise the resolution of an image", formatter_class=fmt)
    p.add_argument("--model", required=True, help="model archive")
    p.add_argument("--in", dest="input", required=True, help="input PNG (side must match a stage)")
    p.add_argument("--target", type=int, required=True, help="output side")
    p.add_argument("--seed", type=int, default=0, help="root seed")
    p.add_argument("--attributes", default=None, help="attribute query for attribute-conditioned models")
    p.add_argument("--out", default="superres.png", help="output PNG")
    p.set_defaults(func=cmd_superres)

    p = sub.add_parser("eval", help="proxy Frechet distance against real images", formatter_class=fmt)
    p.add_argument("--model", required=True, help="model archive")
    p.add_argument("--real", required=True, help="held-out real data (IDX dir or image dir)")
    p.add_argument("--dataset", choices=["mnist", "fashion", "celeba", "dir"], default="mnist",
                   help="layout of --real")
    p.add_argument("--split", default="t10k", help="IDX split for --real")
    p.add_argument("--count", type=int, default=10000, help="generated and real sample count")
    p.add_argument("--seed", type=int, default=0, help="root seed")
    p.add_argument("--attributes", default=None, help="attribute query for attribute-conditioned models")
    p.add_argument("--out", default="report.csv", help=f"CSV with header {','.join(CSV_HEADER)}")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="training-size robustness sweep", formatter_class=fmt)
    _add_model_flags(p)
    p.add_argument("--real", required=True, help="held-out real data (IDX dir, t10k split)")
    p.add_argument("--sizes", default="1000,2000,5000,10000,20000,60000", help="comma-separated sizes")
    p.add_argument("--count", type=int, default=1000, help="samples per size")
    p.add_argument("--out", default="sweep.csv", help="CSV output")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if a.threads is not None and a.threads < 1:
        print("pager: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    limit = 1 if a.deterministic else a.threads
    try:
        if limit is None:
            return a.func(a)
        with threadpool_limits(limits=limit):
            return a.func(a)
    except CliError as exc:
        print(f"pager: error: {exc}", file=sys.stderr)
        return exc.code
    except DataFormatError as exc:
        print(f"pager: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvalidInputError as exc:
        print(f"pager: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"pager: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
