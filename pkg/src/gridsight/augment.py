"""Rotation and hue-shift augmentation with label refitting and dataset expansion.

Rotation keeps the canvas size, fills exposed corners with black, and refits
each box to the axis-aligned envelope of its rotated corners. Positive angles
rotate clockwise; negative counter-clockwise. Hue shifts rotate the hue angle
only, leaving saturation and value untouched. Expansion applies the plan to
the train split only and multiplies it by (1 + rotations) * (1 + hue copies).
"""

from __future__ import annotations

import math
import random
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from . import images
from .errors import NameCollision
from .model import (
    Annotation,
    DatasetManifest,
    ImageRecord,
    PixelBBox,
    Provenance,
    label_path_for,
    read_label_file,
    write_label_file,
)

# Boxes clipped below this area or this fraction of their pre-clip envelope
# are dropped rather than kept as near-empty labels.
MIN_CLIPPED_AREA = 1.0
MIN_CLIPPED_FRACTION = 0.1


@dataclass(frozen=True)
class RotationSpec:
    theta: float

    def __post_init__(self):
        if not -180.0 < self.theta <= 180.0:
            raise ValueError(f"theta {self.theta} outside (-180, 180]")

    @property
    def id_suffix(self) -> str:
        return f"rot{self.theta:g}"


@dataclass(frozen=True)
class HueSpec:
    max_tint: float = 15.0
    copies: int = 2  # one warmer draw, one cooler draw
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.max_tint <= 180.0:
            raise ValueError(f"max_tint {self.max_tint} outside [0, 180]")
        if self.copies < 0:
            raise ValueError("copies must be >= 0")


@dataclass(frozen=True)
class AugmentPlan:
    rotations: tuple[RotationSpec, ...] = ()
    hue: HueSpec = field(default_factory=HueSpec)
    applies_to: str = "train"

    def __post_init__(self):
        if self.applies_to != "train":
            raise ValueError("augmentation applies to the train split only")


def rotate_image(image: np.ndarray, theta: float) -> np.ndarray:
    """Rotate content by theta degrees (positive = clockwise) about the image
    center on an unchanged canvas; exposed corners become black."""
    if theta == 0:
        return image.copy()
    h, w = image.shape[:2]
    center = ((w - 1) / 2.0, (h - 1) / 2.0)
    # cv2 treats positive angles as counter-clockwise.
    m = cv2.getRotationMatrix2D(center, -theta, 1.0)
    return cv2.warpAffine(
        image, m, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0
    )


def rotated_envelope(box: PixelBBox, theta: float, width: float, height: float) -> PixelBBox:
    """Axis-aligned envelope of the box's corners rotated about the image
    center, before any clipping."""
    rad = math.radians(theta)
    cos_t, sin_t = math.cos(rad), math.sin(rad)
    cx, cy = width / 2.0, height / 2.0
    xs, ys = [], []
    for x, y in (
        (box.xmin, box.ymin),
        (box.xmax, box.ymin),
        (box.xmax, box.ymax),
        (box.xmin, box.ymax),
    ):
        dx, dy = x - cx, y - cy
        xs.append(cx + dx * cos_t - dy * sin_t)
        ys.append(cy + dx * sin_t + dy * cos_t)
    return PixelBBox(xmin=min(xs), ymin=min(ys), xmax=max(xs), ymax=max(ys))


def rotate_bbox(box: PixelBBox, theta: float, width: float, height: float) -> PixelBBox | None:
    """Envelope of the rotated box clipped to the canvas; None when the
    clipped remnant is below the drop thresholds."""
    env = rotated_envelope(box, theta, width, height)
    xmin = max(env.xmin, 0.0)
    ymin = max(env.ymin, 0.0)
    xmax = min(env.xmax, width)
    ymax = min(env.ymax, height)
    if xmin >= xmax or ymin >= ymax:
        return None
    clipped_area = (xmax - xmin) * (ymax - ymin)
    if clipped_area < MIN_CLIPPED_AREA or clipped_area < MIN_CLIPPED_FRACTION * env.area:
        return None
    return PixelBBox(xmin=xmin, ymin=ymin, xmax=xmax, ymax=ymax)


def rotate_annotations(
    annotations: list[Annotation], theta: float, width: int, height: int
) -> list[Annotation]:
    if theta == 0:
        return list(annotations)
    out = []
    for a in annotations:
        rotated = rotate_bbox(a.box.to_pixels(width, height), theta, width, height)
        if rotated is not None:
            out.append(Annotation(class_id=a.class_id, box=rotated.to_normalized(width, height)))
    return out


def _rgb_to_hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    diff = mx - mn
    safe_diff = np.where(diff > 0, diff, 1.0)
    h = np.zeros_like(mx)
    r_is_max = (mx == r) & (diff > 0)
    g_is_max = (mx == g) & (diff > 0) & ~r_is_max
    b_is_max = (diff > 0) & ~r_is_max & ~g_is_max
    h = np.where(r_is_max, ((g - b) / safe_diff) % 6.0, h)
    h = np.where(g_is_max, (b - r) / safe_diff + 2.0, h)
    h = np.where(b_is_max, (r - g) / safe_diff + 4.0, h)
    s = np.where(mx > 0, diff / np.where(mx > 0, mx, 1.0), 0.0)
    return h / 6.0, s, mx


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    channels = [
        np.select([i == 0, i == 1, i == 2, i == 3, i == 4, i == 5], [v, q, p, p, t, v]),
        np.select([i == 0, i == 1, i == 2, i == 3, i == 4, i == 5], [t, v, v, q, p, p]),
        np.select([i == 0, i == 1, i == 2, i == 3, i == 4, i == 5], [p, p, t, v, v, q]),
    ]
    return np.stack(channels, axis=-1)


def hue_shift(image: np.ndarray, delta: float) -> np.ndarray:
    """Rotate every pixel's hue by delta degrees; saturation/value unchanged."""
    if delta == 0:
        return image.copy()
    rgb = image.astype(np.float64) / 255.0
    h, s, v = _rgb_to_hsv(rgb)
    out = _hsv_to_rgb(h + delta / 360.0, s, v)
    return np.round(out * 255.0).astype(np.uint8)


@dataclass(frozen=True)
class GeneratedImage:
    new_id: str
    source: ImageRecord
    chain: tuple[str, ...]
    theta: float | None
    hue_delta: float | None


def _hue_deltas(spec: HueSpec, rng: random.Random) -> list[float]:
    # Alternate warm (negative) and cool (positive) draws.
    deltas = []
    for copy in range(spec.copies):
        magnitude = rng.uniform(0.0, spec.max_tint)
        deltas.append(-magnitude if copy % 2 == 0 else magnitude)
    return deltas


def plan_expansion(manifest: DatasetManifest, plan: AugmentPlan) -> list[GeneratedImage]:
    """Deterministic list of images the plan generates from the train split."""
    rng = random.Random(plan.hue.seed)
    existing = {r.id for r in manifest.records}
    generated: list[GeneratedImage] = []

    def register(item: GeneratedImage) -> None:
        if item.new_id in existing:
            raise NameCollision(f"generated id {item.new_id!r} already exists")
        existing.add(item.new_id)
        generated.append(item)

    for record in manifest.records_for(plan.applies_to):
        bases: list[tuple[str, tuple[str, ...], float | None]] = [(record.id, (), None)]
        for rot in plan.rotations:
            new_id = f"{record.id}__{rot.id_suffix}"
            register(GeneratedImage(new_id, record, (rot.id_suffix,), rot.theta, None))
            bases.append((new_id, (rot.id_suffix,), rot.theta))
        for base_id, chain, theta in bases:
            for delta in _hue_deltas(plan.hue, rng):
                rounded = round(delta)
                # Keep the sign when a warm draw rounds to zero so the warm
                # and cool copies of a base can never share an id.
                suffix = f"hue-{rounded}" if rounded == 0 and delta < 0 else f"hue{rounded}"
                new_id = f"{base_id}__{suffix}"
                register(GeneratedImage(new_id, record, chain + (suffix,), theta, delta))
    return generated


def expand_dataset(
    manifest: DatasetManifest,
    plan: AugmentPlan,
    manifest_dir: str | Path,
    out_root: str | Path,
) -> DatasetManifest:
    """Materialize the augmented dataset under out_root and return its manifest.

    Originals (all splits) are copied byte-for-byte; generated train images are
    written as PNG with labels refit per transform. Layout: out_root/images,
    out_root/labels.
    """
    manifest_dir = Path(manifest_dir)
    out_root = Path(out_root)
    images_dir = out_root / "images"
    labels_dir = out_root / "labels"
    images_dir.mkdir(parents=True, exist_ok=True)
    labels_dir.mkdir(parents=True, exist_ok=True)

    generated = plan_expansion(manifest, plan)

    new_records: list[ImageRecord] = []
    for record in manifest.records:
        src = _resolve(record.path, manifest_dir)
        dst = images_dir / (record.id + src.suffix)
        shutil.copyfile(src, dst)
        src_label = label_path_for(src)
        if src_label.exists():
            shutil.copyfile(src_label, labels_dir / (record.id + ".txt"))
        new_records.append(
            ImageRecord(
                id=record.id,
                path=str(dst.relative_to(out_root)),
                width=record.width,
                height=record.height,
                split=record.split,
                provenance=record.provenance,
            )
        )

    for item in generated:
        src = _resolve(item.source.path, manifest_dir)
        image = images.read_image(src)
        annotations = _load_annotations(src, manifest.n_classes)
        if item.theta is not None:
            image = rotate_image(image, item.theta)
            annotations = rotate_annotations(
                annotations, item.theta, item.source.width, item.source.height
            )
        if item.hue_delta is not None:
            image = hue_shift(image, item.hue_delta)
        dst = images_dir / (item.new_id + ".png")
        images.write_png(dst, image)
        write_label_file(labels_dir / (item.new_id + ".txt"), annotations)
        new_records.append(
            ImageRecord(
                id=item.new_id,
                path=str(dst.relative_to(out_root)),
                width=item.source.width,
                height=item.source.height,
                split=plan.applies_to,
                provenance=Provenance(source_id=item.source.id, chain=item.chain),
            )
        )

    return DatasetManifest(
        classes=manifest.classes,
        records=new_records,
        split_ratios=manifest.split_ratios,
        seed=manifest.seed,
    )


def _resolve(path: str, base: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base / p


def _load_annotations(image_path: Path, n_classes: int) -> list[Annotation]:
    label = label_path_for(image_path)
    return read_label_file(label, n_classes) if label.exists() else []
