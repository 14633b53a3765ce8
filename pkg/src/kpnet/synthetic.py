"""Seeded synthetic handwriting-like digits written as IDX files.

Digits 0-9 are rendered from the TrueType fonts that ship with matplotlib,
then randomly rotated, sheared, scaled, shifted, thickened or thinned and
blurred, and finally downsampled to 28×28 grayscale.  The result is a
stand-in for MNIST when the real files are not at hand; every loader in
:mod:`kpnet.data` treats it exactly like any other IDX pair.

Needs Pillow and matplotlib (for the font files).
"""
from __future__ import annotations

from functools import lru_cache
from pathlib import Path

import numpy as np

from .data import Dataset, write_idx

_FONT_NAMES = (
    "DejaVuSans.ttf", "DejaVuSans-Bold.ttf", "DejaVuSans-Oblique.ttf", "DejaVuSans-BoldOblique.ttf",
    "DejaVuSansMono.ttf", "DejaVuSansMono-Bold.ttf", "DejaVuSansMono-Oblique.ttf",
    "DejaVuSerif.ttf", "DejaVuSerif-Bold.ttf", "DejaVuSerif-Italic.ttf", "DejaVuSerif-BoldItalic.ttf",
    "STIXGeneral.ttf", "STIXGeneralBol.ttf", "STIXGeneralItalic.ttf", "STIXGeneralBolIta.ttf",
    "cmr10.ttf", "cmss10.ttf", "cmtt10.ttf", "cmb10.ttf",
)


def font_paths() -> list[Path]:
    import matplotlib

    root = Path(matplotlib.get_data_path()) / "fonts" / "ttf"
    return [root / name for name in _FONT_NAMES if (root / name).exists()]


@lru_cache(maxsize=None)
def _font(path: str, size: int):
    from PIL import ImageFont

    return ImageFont.truetype(path, size)


def render_digit(digit: int, rng: np.random.Generator, fonts: list[Path]) -> np.ndarray:
    from PIL import Image, ImageDraw, ImageFilter

    canvas = 64
    img = Image.new("L", (canvas, canvas), 0)
    draw = ImageDraw.Draw(img)
    font = _font(str(fonts[rng.integers(len(fonts))]), int(rng.integers(30, 44)))
    text = str(digit)
    left, top, right, bottom = draw.textbbox((0, 0), text, font=font)
    x = (canvas - (right - left)) / 2 - left + rng.normal(0, 2.0)
    y = (canvas - (bottom - top)) / 2 - top + rng.normal(0, 2.0)
    draw.text((x, y), text, fill=255, font=font)

    # random stroke weight
    choice = rng.random()
    if choice < 0.3:
        img = img.filter(ImageFilter.MaxFilter(3))
    elif choice < 0.45:
        img = img.filter(ImageFilter.MinFilter(3))

    # rotation + shear + anisotropic scale about the centre
    angle = np.deg2rad(rng.normal(0, 12))
    shear = rng.normal(0, 0.2)
    sx, sy = np.exp(rng.normal(0, 0.1, size=2))
    c, s = np.cos(angle), np.sin(angle)
    m = np.array([[c, -s], [s, c]]) @ np.array([[1, shear], [0, 1]]) @ np.diag([sx, sy])
    inv = np.linalg.inv(m)
    centre = np.array([canvas / 2, canvas / 2])
    offset = centre - inv @ centre
    img = img.transform((canvas, canvas), Image.AFFINE,
                        (inv[0, 0], inv[0, 1], offset[0], inv[1, 0], inv[1, 1], offset[1]),
                        resample=Image.BILINEAR)
    img = img.filter(ImageFilter.GaussianBlur(rng.uniform(0.3, 1.2)))

    # crop to the ink with a margin, then fit into a 20×20 box on 28×28 like MNIST
    arr = np.asarray(img, dtype=np.float32)
    ys, xs = np.nonzero(arr > 20)
    if len(ys):
        arr = arr[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]
    arr = arr * (255.0 / max(arr.max(), 1.0))
    h, w = arr.shape
    scale = 20.0 / max(h, w)
    small = Image.fromarray(arr.clip(0, 255).astype(np.uint8)).resize(
        (max(1, round(w * scale)), max(1, round(h * scale))), Image.LANCZOS)
    out = np.zeros((28, 28), dtype=np.float32)
    sh, sw = small.size[1], small.size[0]
    oy = int(np.clip((28 - sh) // 2 + rng.integers(-2, 3), 0, 28 - sh))
    ox = int(np.clip((28 - sw) // 2 + rng.integers(-2, 3), 0, 28 - sw))
    out[oy : oy + sh, ox : ox + sw] = np.asarray(small, dtype=np.float32)
    out += rng.normal(0, 12, size=out.shape) * (rng.random() < 0.5)
    return out.clip(0, 255).astype(np.uint8)


def make_digits(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """``n`` images (uint8, N×28×28) with balanced labels in random order."""
    rng = np.random.default_rng(seed)
    fonts = font_paths()
    if not fonts:
        raise RuntimeError("no matplotlib TrueType fonts found")
    labels = rng.permutation(np.arange(n) % 10).astype(np.uint8)
    images = np.stack([render_digit(int(d), rng, fonts) for d in labels])
    return images, labels


def write_digit_idx(directory, n_train: int = 10000, n_test: int = 2000, seed: int = 0) -> Path:
    """Write ``train-*`` and ``t10k-*`` IDX pairs into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for stem, n, s in (("train", n_train, seed), ("t10k", n_test, seed + 10_000)):
        images, labels = make_digits(n, s)
        write_idx(directory / f"{stem}-images-idx3-ubyte", images)
        write_idx(directory / f"{stem}-labels-idx1-ubyte", labels)
    return directory


def as_dataset(images: np.ndarray, labels: np.ndarray) -> Dataset:
    return Dataset(images[:, None].astype(np.float32) / np.float32(255), labels.astype(np.int64), 10)
