"""Grayscale image I/O and normalization.

Internal working domain is float64 in [-1, 1]; 8-bit files map linearly
from [0, 255]. The mapping round-trips losslessly for 8-bit inputs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import PreconditionError


def to_unit(raw: np.ndarray) -> np.ndarray:
    """Map uint8 [0, 255] to float64 [-1, 1]."""
    return raw.astype(np.float64) / 127.5 - 1.0


def to_bytes(img: np.ndarray) -> np.ndarray:
    """Map float [-1, 1] to uint8 [0, 255] (values clipped first)."""
    clipped = np.clip(img, -1.0, 1.0)
    return np.round((clipped + 1.0) * 127.5).astype(np.uint8)


def quantize(img: np.ndarray) -> np.ndarray:
    """Round-trip through 8-bit, staying in the [-1, 1] domain."""
    return to_unit(to_bytes(img))


def load_image(path: str | Path) -> np.ndarray:
    """Read an 8-bit grayscale raster file into the [-1, 1] domain."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return to_unit(arr)


def save_image(path: str | Path, img: np.ndarray) -> None:
    """Write a [-1, 1] image as an 8-bit grayscale PNG."""
    if img.ndim != 2:
        raise PreconditionError(f"expected 2-D image, got shape {img.shape}")
    Image.fromarray(to_bytes(img), mode="L").save(path)


def check_image(img: np.ndarray, *, square: bool = False) -> None:
    """Validate finiteness and optionally squareness."""
    if img.ndim != 2 or img.size == 0:
        raise PreconditionError(f"expected nonempty 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise PreconditionError("image contains non-finite values")
    if square and img.shape[0] != img.shape[1]:
        raise PreconditionError(f"expected square image, got shape {img.shape}")
