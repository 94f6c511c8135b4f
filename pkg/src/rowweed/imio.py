"""Image file I/O: 8-bit RGB PNG/PPM in, PNG masks and label maps out."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DatasetIOError


def read_rgb(path) -> np.ndarray:
    """Read a PNG or binary PPM (P6) as an ``(H, W, 3)`` uint8 array."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, ValueError) as exc:
        raise DatasetIOError(f"cannot read image {path}: {exc}") from exc


def write_rgb(path, img: np.ndarray) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(path)


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(img.tobytes())


def write_mask(path, mask: np.ndarray) -> None:
    """Binary mask as 8-bit PNG, 0 / 255."""
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def write_index(path, index: np.ndarray) -> None:
    """Small-valued class map (0, 1, 2, ...) as 8-bit grayscale PNG."""
    index = np.asarray(index)
    if index.min(initial=0) < 0 or index.max(initial=0) > 255:
        raise ValueError("class indices must fit in 8 bits")
    Image.fromarray(index.astype(np.uint8), mode="L").save(path)


def read_index(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im).astype(np.uint8)


def write_labels16(path, labels: np.ndarray) -> None:
    """Label map as 16-bit grayscale PNG."""
    labels = np.asarray(labels)
    if labels.max(initial=0) > 65535:
        raise ValueError("too many labels for a 16-bit PNG")
    Image.fromarray(labels.astype(np.uint16)).save(path)


def read_labels16(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im).astype(np.int32)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
