"""8-bit PNG reading and writing. Only plain grayscale (L) and RGB images are
accepted; everything else is rejected rather than silently converted."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import UnsupportedFormatError
from .tensor import Tensor


def load_png(path) -> Tensor:
    """Return a (1, C, H, W) float32 tensor in [0, 1] with C = 1 or 3."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            fmt, mode = im.format, im.mode
            if fmt != "PNG":
                raise UnsupportedFormatError(f"{path}: not a PNG file (format {fmt})")
            if mode not in ("L", "RGB"):
                raise UnsupportedFormatError(
                    f"{path}: PNG mode {mode!r} unsupported; need 8-bit grayscale or RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise UnsupportedFormatError(f"{path}: not a readable image") from exc
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return Tensor(arr[None].astype(np.float32) / np.float32(255.0))


def quantize(x: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] then round half up to 8 bits."""
    return np.floor(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_png(img, path) -> None:
    """Write a (1, C, H, W), (C, H, W) or (H, W) image with C in {1, 3}."""
    a = np.asarray(img.data if isinstance(img, Tensor) else img)
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise UnsupportedFormatError(f"save_png writes one image, got batch of {a.shape[0]}")
        a = a[0]
    if a.ndim == 3:
        if a.shape[0] not in (1, 3):
            raise UnsupportedFormatError(f"save_png needs 1 or 3 channels, got {a.shape[0]}")
        a = a[0] if a.shape[0] == 1 else a.transpose(1, 2, 0)
    q = quantize(a)
    Image.fromarray(q, mode="L" if q.ndim == 2 else "RGB").save(Path(path), format="PNG")
