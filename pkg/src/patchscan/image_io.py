"""PNG read/write for images and binary defect masks."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError


def read_rgb(path) -> np.ndarray:
    """Load a PNG as an (H, W, 3) uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def read_mask(path) -> np.ndarray:
    """Load a mask PNG as an (H, W) array of {0, 1}.

    Any value above 127 counts as a defect pixel; multi-channel mask files
    are read from their first channel.
    """
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise FormatError(f"mask {path} is not a single-channel image")
    return (arr > 127).astype(np.uint8)


def quantize_u8(arr) -> np.ndarray:
    """Round and clip floating intensities to 8-bit. Only used at export."""
    return np.clip(np.rint(np.asarray(arr, dtype=np.float64)), 0, 255).astype(np.uint8)


def write_png(path, arr) -> None:
    """Write an RGB (H, W, 3) or grayscale (H, W) array as PNG.

    Float arrays are quantized to 8-bit here (the only place that happens).
    """
    a = np.asarray(arr)
    if a.dtype != np.uint8:
        a = quantize_u8(a)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(a).save(path, format="PNG")


def write_mask(path, mask) -> None:
    """Write a {0, 1} mask as a 0/255 grayscale PNG (survives the >127 read rule)."""
    m = np.asarray(mask)
    write_png(path, (m > 0).astype(np.uint8) * np.uint8(255))
