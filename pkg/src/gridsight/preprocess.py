"""Auto-orientation and letterbox resizing, with exact label re-projection.

Orientation codes are the standard image-metadata values 1-8; applying
`auto_orient` makes the pixel data render identically with the metadata
stripped. Letterboxing scales the content to fit a square target while
preserving aspect ratio and pads the rest with black.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import UnsupportedOrientationCode
from .model import Annotation, NormalizedBBox

DEFAULT_TARGET = 640


@dataclass(frozen=True)
class LetterboxTransform:
    scale: float
    pad_x: int
    pad_y: int
    target: int


def auto_orient(image: np.ndarray, code: int = 1) -> np.ndarray:
    """Physically rotate/flip pixels per the orientation code (1-8).

    Codes 5-8 swap width and height. Code 1 returns an identical copy.
    """
    if code == 1:
        return image.copy()
    elif code == 2:
        out = image[:, ::-1]
    elif code == 3:
        out = image[::-1, ::-1]
    elif code == 4:
        out = image[::-1, :]
    elif code == 5:
        out = np.swapaxes(image, 0, 1)
    elif code == 6:
        out = np.rot90(image, k=-1)
    elif code == 7:
        out = np.swapaxes(image[::-1, ::-1], 0, 1)
    elif code == 8:
        out = np.rot90(image, k=1)
    else:
        raise UnsupportedOrientationCode(f"orientation code {code} not in 1..8")
    return np.ascontiguousarray(out)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def letterbox(image: np.ndarray, target: int = DEFAULT_TARGET) -> tuple[np.ndarray, LetterboxTransform]:
    """Resize into a black-padded target x target square, preserving aspect.

    The content is scaled by target / max(W, H) with bilinear interpolation
    and centered; when padding is odd, the extra pixel goes to the
    bottom/right. A source already at target x target is returned bit-identical.
    """
    h, w = image.shape[:2]
    scale = target / max(w, h)
    # Extremely thin inputs still keep at least one content pixel.
    new_w = max(1, _round_half_up(w * scale))
    new_h = max(1, _round_half_up(h * scale))

    if (new_w, new_h) == (w, h):
        content = image.copy()
    else:
        content = cv2.resize(image, (new_w, new_h), interpolation=cv2.INTER_LINEAR)

    pad_x = (target - new_w) // 2
    pad_y = (target - new_h) // 2
    canvas = np.zeros((target, target) + image.shape[2:], dtype=image.dtype)
    canvas[pad_y : pad_y + new_h, pad_x : pad_x + new_w] = content
    return canvas, LetterboxTransform(scale=scale, pad_x=pad_x, pad_y=pad_y, target=target)


def project_annotations(
    annotations: list[Annotation],
    src_width: int,
    src_height: int,
    transform: LetterboxTransform,
) -> list[Annotation]:
    """Re-express boxes from the source frame in the letterboxed frame."""
    t = transform
    if t.scale == 1.0 and t.pad_x == 0 and t.pad_y == 0 and t.target == src_width == src_height:
        return list(annotations)

    out = []
    for a in annotations:
        px = a.box.to_pixels(src_width, src_height)
        xmin = px.xmin * t.scale + t.pad_x
        xmax = px.xmax * t.scale + t.pad_x
        ymin = px.ymin * t.scale + t.pad_y
        ymax = px.ymax * t.scale + t.pad_y
        box = _clamped_normalized(
            cx=(xmin + xmax) / 2 / t.target,
            cy=(ymin + ymax) / 2 / t.target,
            w=(xmax - xmin) / t.target,
            h=(ymax - ymin) / t.target,
        )
        out.append(Annotation(class_id=a.class_id, box=box))
    return out


def _clamped_normalized(cx: float, cy: float, w: float, h: float) -> NormalizedBBox:
    # Nudge float noise back inside [0, 1]; anything beyond noise still raises.
    w = min(w, 1.0)
    h = min(h, 1.0)
    cx = min(max(cx, w / 2), 1.0 - w / 2) if w < 1.0 else 0.5
    cy = min(max(cy, h / 2), 1.0 - h / 2) if h < 1.0 else 0.5
    return NormalizedBBox(cx=cx, cy=cy, w=w, h=h)
