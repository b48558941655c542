"""Deterministic synthetic grayscale corpora (28x28, 10 classes).

The toolkit itself takes user-supplied IDX files; this module exists so the
test suite and the demo configs have hermetic, reproducible data to run on.
Two domains are provided: font-rendered digits (low feature complexity) and
parametric clothing-like shapes (higher feature complexity), which also act
as each other's invalid inputs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw, ImageFont
from scipy import ndimage

from . import datasets
from . import numerics as nx
from .numerics import Tensor

_GLYPH_CACHE: dict = {}


def _find_font(size: int) -> ImageFont.FreeTypeFont | ImageFont.ImageFont:
    key = ("font", size)
    if key not in _GLYPH_CACHE:
        try:
            import matplotlib
            path = os.path.join(os.path.dirname(matplotlib.__file__),
                                "mpl-data", "fonts", "ttf", "DejaVuSans.ttf")
            _GLYPH_CACHE[key] = ImageFont.truetype(path, size)
        except Exception:
            _GLYPH_CACHE[key] = ImageFont.load_default()
    return _GLYPH_CACHE[key]


def _digit_base(digit: int, size: int = 40) -> Tensor:
    """Centered high-res glyph, cached; distortions are applied per sample."""
    key = ("digit", digit, size)
    if key not in _GLYPH_CACHE:
        canvas = Image.new("L", (2 * size, 2 * size), 0)
        draw = ImageDraw.Draw(canvas)
        font = _find_font(size)
        text = str(digit)
        x0, y0, x1, y1 = draw.textbbox((0, 0), text, font=font)
        draw.text((size - (x0 + x1) / 2, size - (y0 + y1) / 2), text, fill=255, font=font)
        _GLYPH_CACHE[key] = np.asarray(canvas, dtype=np.float64) / 255.0
    return _GLYPH_CACHE[key]


def _distort_to_28(base: Tensor, rng: np.random.Generator) -> Tensor:
    """Random affine + blur + intensity jitter, downsampled to 28x28."""
    h = base.shape[0]
    angle = np.deg2rad(rng.uniform(-12.0, 12.0))
    shear = rng.uniform(-0.15, 0.15)
    scale = rng.uniform(0.85, 1.15)
    cos, sin = np.cos(angle), np.sin(angle)
    rot = np.array([[cos, -sin], [sin, cos]])
    shr = np.array([[1.0, shear], [0.0, 1.0]])
    mat = (rot @ shr) / scale
    center = (h - 1) / 2.0
    shift = rng.uniform(-2.0, 2.0, size=2) * h / 28.0
    offset = np.array([center, center]) - mat @ np.array([center + shift[0], center + shift[1]])
    warped = ndimage.affine_transform(base, mat, offset=offset, order=1, cval=0.0)
    warped = ndimage.gaussian_filter(warped, sigma=rng.uniform(0.6, 1.2))
    small = np.asarray(
        Image.fromarray(np.clip(warped * 255, 0, 255).astype(np.uint8)).resize(
            (28, 28), Image.BILINEAR),
        dtype=np.float64) / 255.0
    peak = small.max()
    if peak > 0:
        small = small / peak * rng.uniform(0.8, 1.0)
    return np.clip(small, 0.0, 1.0)


def _shape_base(cls: int, rng: np.random.Generator, size: int = 56) -> Tensor:
    """One clothing-like shape family per class, with jittered geometry."""
    img = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(img)
    s = size / 28.0
    j = lambda a, b: rng.uniform(a, b) * s   # noqa: E731  jittered length in px

    def rect(x0, y0, x1, y1, fill=255):
        draw.rectangle([x0 * s, y0 * s, x1 * s, y1 * s], fill=fill)

    def poly(points, fill=255):
        draw.polygon([(x * s, y * s) for x, y in points], fill=fill)

    w = rng.uniform(0.85, 1.15)
    if cls == 0:      # short-sleeved top
        rect(9 * w, 6, 19 * w, 24)
        rect(4 * w, 6, 24 * w, 11)
    elif cls == 1:    # trousers
        rect(8, 4, 20, 8)
        rect(8, 8, 12.5, 25)
        rect(15.5, 8, 20, 25)
    elif cls == 2:    # long-sleeved pullover
        rect(9, 5, 19, 24)
        rect(3, 5, 25, 9)
        rect(3, 5, 6.5, 20)
        rect(21.5, 5, 25, 20)
    elif cls == 3:    # dress
        poly([(12, 4), (16, 4), (21 * w, 25), (7 * (2 - w), 25)])
    elif cls == 4:    # open coat
        rect(7, 4, 21, 25)
        draw.line([(14 * s, 4 * s), (14 * s, 25 * s)], fill=0, width=max(1, int(1.5 * s)))
    elif cls == 5:    # sandal
        rect(4, 18, 24, 21)
        for x in (7, 13, 19):
            poly([(x, 10), (x + 2, 10), (x + 4, 18), (x - 2, 18)])
    elif cls == 6:    # buttoned shirt
        rect(8, 5, 20, 25)
        rect(5, 5, 23, 9)
        for y in (11, 15, 19, 23):
            draw.ellipse([13.2 * s, y * s, 14.8 * s, (y + 1.6) * s], fill=0)
    elif cls == 7:    # sneaker
        poly([(3, 21), (10, 14), (17, 14), (25, 18), (25, 23), (3, 23)])
        rect(3, 23, 25, 24.5, fill=180)
    elif cls == 8:    # handbag
        rect(5, 12, 23, 24)
        draw.arc([9 * s, 4 * s, 19 * s, 16 * s], 180, 360, fill=255,
                 width=max(1, int(1.2 * s)))
    else:             # ankle boot
        poly([(8, 4), (15, 4), (15, 16), (25, 20), (25, 24), (8, 24)])
    return np.asarray(img, dtype=np.float64) / 255.0


@dataclass
class Corpus:
    train_images: Tensor
    train_labels: Tensor
    test_images: Tensor
    test_labels: Tensor
    name: str


def _make_corpus(kind: str, n_train: int, n_test: int, seed: int) -> Corpus:
    rng = nx.seeded_rng(seed)
    total = n_train + n_test
    images = np.empty((total, 28, 28))
    labels = np.empty(total, dtype=np.int64)
    for i in range(total):
        cls = int(rng.integers(0, 10))
        labels[i] = cls
        base = _digit_base(cls) if kind == "digits" else _shape_base(cls, rng)
        images[i] = _distort_to_28(base, rng)
    return Corpus(images[:n_train], labels[:n_train],
                  images[n_train:], labels[n_train:], kind)


def make_digit_corpus(n_train: int = 10000, n_test: int = 2000, seed: int = 7001) -> Corpus:
    return _make_corpus("digits", n_train, n_test, seed)


def make_fashion_corpus(n_train: int = 10000, n_test: int = 2000, seed: int = 7002) -> Corpus:
    return _make_corpus("shapes", n_train, n_test, seed)


def write_corpus(corpus: Corpus, out_dir, prefix: str | None = None) -> dict[str, str]:
    """Write the corpus as four IDX files and return their paths."""
    os.makedirs(out_dir, exist_ok=True)
    prefix = prefix or corpus.name
    paths = {}
    for split in ("train", "test"):
        img = getattr(corpus, f"{split}_images")
        lab = getattr(corpus, f"{split}_labels")
        ip = os.path.join(out_dir, f"{prefix}-{split}-images.idx")
        lp = os.path.join(out_dir, f"{prefix}-{split}-labels.idx")
        datasets.save_idx(img, ip)
        datasets.save_idx(lab, lp)
        paths[f"{split}_images"] = ip
        paths[f"{split}_labels"] = lp
    return paths


def write_demo_corpora(out_dir, n_train: int = 10000, n_test: int = 2000,
                       seed: int = 7000) -> dict[str, dict[str, str]]:
    """Digits + shapes corpora for the demo configs; deterministic given seed."""
    digits = _make_corpus("digits", n_train, n_test, nx.derive_seed(seed, 1))
    shapes = _make_corpus("shapes", n_train, n_test, nx.derive_seed(seed, 2))
    return {
        "digits": write_corpus(digits, out_dir, "digits"),
        "shapes": write_corpus(shapes, out_dir, "shapes"),
    }
