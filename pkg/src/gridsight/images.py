"""Raster I/O helpers.

All in-memory rasters are uint8 RGB arrays of shape (H, W, 3). Intermediate
pipeline artifacts are written as PNG so byte-exact tests stay possible.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

EXIF_ORIENTATION_TAG = 274


def read_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def read_orientation(path: str | Path) -> int:
    """EXIF orientation code of an image file; 1 when absent."""
    with Image.open(path) as im:
        exif = im.getexif()
        code = exif.get(EXIF_ORIENTATION_TAG, 1)
    return int(code) if code in range(1, 9) else 1


def write_png(path: str | Path, image: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(image)).save(path, format="PNG")


def decode_image(payload: bytes) -> np.ndarray:
    import io

    with Image.open(io.BytesIO(payload)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def encode_png(image: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(image)).save(buf, format="PNG")
    return buf.getvalue()
