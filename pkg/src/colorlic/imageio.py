"""Reading and writing 8-bit RGB images as ``(3, H, W)`` float arrays in [0, 1]."""

from __future__ import annotations

import io
import warnings
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, UsageError

IMAGE_SUFFIXES = (".png", ".ppm", ".pnm", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")


def read_image(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"image not found: {path}")
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise FormatError(f"cannot decode image {path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def to_uint8(img: np.ndarray) -> np.ndarray:
    """``(3, H, W)`` floats to ``(H, W, 3)`` bytes, rounding to nearest."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.round(img * 255.0).astype(np.uint8).transpose(1, 2, 0)


def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def quantize_8bit(img: np.ndarray) -> np.ndarray:
    """The values an image takes after an 8-bit write and re-read."""
    return to_uint8(img).transpose(2, 0, 1).astype(np.float64) / 255.0


def load_image_dir(path) -> list[tuple[str, np.ndarray]]:
    """All readable images in ``path`` sorted by file name; unreadable files are skipped with a warning."""
    path = Path(path)
    if not path.is_dir():
        raise UsageError(f"image directory not found: {path}")
    out = []
    for f in sorted(path.iterdir()):
        if f.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        try:
            out.append((f.name, read_image(f)))
        except FormatError as exc:
            warnings.warn(f"skipping {f.name}: {exc}", stacklevel=2)
    return out
