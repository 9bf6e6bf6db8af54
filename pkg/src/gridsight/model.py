"""Shared data model: classes, boxes, label I/O, dataset manifest and splitting.

Label files follow the YOLO TXT convention: one object per line,
``class cx cy w h`` with coordinates normalized to [0, 1]. Prediction
files append a trailing confidence: ``class cx cy w h conf``.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import (
    BadRatios,
    BoxOutOfRange,
    ClassOutOfRange,
    ConfidenceOutOfRange,
    DataError,
    DuplicateId,
    EmptyDataset,
    MalformedLine,
)

# Tolerance on box bounds; absorbs rounding introduced by serialization.
BOX_EPS = 1e-6

SPLITS = ("train", "val", "test", "unassigned")


@dataclass(frozen=True)
class ComponentClass:
    id: int
    name: str


#: Canonical class ordering used when a manifest does not override it.
CANONICAL_CLASSES = (
    ComponentClass(0, "transformer"),
    ComponentClass(1, "circuit_breaker"),
    ComponentClass(2, "reactor"),
)


@dataclass(frozen=True)
class NormalizedBBox:
    """Center-size box in fractions of the image dimensions."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name, v in (("cx", self.cx), ("cy", self.cy), ("w", self.w), ("h", self.h)):
            if not math.isfinite(v):
                raise BoxOutOfRange(f"{name} is not finite: {v!r}")
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise BoxOutOfRange(f"center ({self.cx}, {self.cy}) outside [0, 1]")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise BoxOutOfRange(f"size ({self.w}, {self.h}) outside (0, 1]")
        if self.cx - self.w / 2 < -BOX_EPS or self.cx + self.w / 2 > 1.0 + BOX_EPS:
            raise BoxOutOfRange(f"x extent [{self.cx - self.w / 2}, {self.cx + self.w / 2}] overflows [0, 1]")
        if self.cy - self.h / 2 < -BOX_EPS or self.cy + self.h / 2 > 1.0 + BOX_EPS:
            raise BoxOutOfRange(f"y extent [{self.cy - self.h / 2}, {self.cy + self.h / 2}] overflows [0, 1]")

    def to_pixels(self, width: float, height: float) -> "PixelBBox":
        return PixelBBox(
            xmin=(self.cx - self.w / 2) * width,
            ymin=(self.cy - self.h / 2) * height,
            xmax=(self.cx + self.w / 2) * width,
            ymax=(self.cy + self.h / 2) * height,
        )


@dataclass(frozen=True)
class PixelBBox:
    """Corner box in continuous pixel coordinates."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise BoxOutOfRange(f"degenerate pixel box ({self.xmin}, {self.ymin}, {self.xmax}, {self.ymax})")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    def to_normalized(self, width: float, height: float) -> NormalizedBBox:
        return NormalizedBBox(
            cx=(self.xmin + self.xmax) / 2 / width,
            cy=(self.ymin + self.ymax) / 2 / height,
            w=(self.xmax - self.xmin) / width,
            h=(self.ymax - self.ymin) / height,
        )


@dataclass(frozen=True)
class Annotation:
    class_id: int
    box: NormalizedBBox


@dataclass(frozen=True)
class Detection:
    class_id: int
    box: NormalizedBBox
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ConfidenceOutOfRange(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class Provenance:
    source_id: str
    chain: tuple[str, ...]


@dataclass
class ImageRecord:
    id: str
    path: str
    width: int
    height: int
    split: str = "unassigned"
    provenance: Provenance | None = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"record {self.id}: dimensions must be >= 1")
        if self.split not in SPLITS:
            raise ValueError(f"record {self.id}: unknown split {self.split!r}")


def _parse_fields(text: str, expected: int) -> list[str]:
    fields = text.split()
    if len(fields) != expected:
        raise MalformedLine(f"expected {expected} fields, got {len(fields)}: {text!r}")
    return fields


def _parse_class(token: str, n_classes: int) -> int:
    try:
        class_id = int(token)
    except ValueError:
        raise MalformedLine(f"class id is not an integer: {token!r}") from None
    if not 0 <= class_id < n_classes:
        raise ClassOutOfRange(f"class {class_id} outside [0, {n_classes})")
    return class_id


def _parse_float(token: str, what: str) -> float:
    try:
        v = float(token)
    except ValueError:
        raise MalformedLine(f"{what} is not numeric: {token!r}") from None
    if not math.isfinite(v):
        raise MalformedLine(f"{what} is not finite: {token!r}")
    return v


def parse_label_line(text: str, n_classes: int) -> Annotation:
    """Parse one ``class cx cy w h`` label line."""
    fields = _parse_fields(text, 5)
    class_id = _parse_class(fields[0], n_classes)
    cx, cy, w, h = (_parse_float(tok, name) for tok, name in zip(fields[1:], "cx cy w h".split()))
    return Annotation(class_id=class_id, box=NormalizedBBox(cx, cy, w, h))


def parse_prediction_line(text: str, n_classes: int) -> Detection:
    """Parse one ``class cx cy w h conf`` prediction line."""
    fields = _parse_fields(text, 6)
    class_id = _parse_class(fields[0], n_classes)
    cx, cy, w, h = (_parse_float(tok, name) for tok, name in zip(fields[1:5], "cx cy w h".split()))
    conf = _parse_float(fields[5], "confidence")
    if not 0.0 <= conf <= 1.0:
        raise ConfidenceOutOfRange(f"confidence {conf} outside [0, 1]")
    return Detection(class_id=class_id, box=NormalizedBBox(cx, cy, w, h), confidence=conf)


def serialize_annotation(annotation: Annotation, decimals: int = 6) -> str:
    """Render an annotation as a label line that re-parses within tolerance.

    Values are rounded to ``decimals`` places; w/h are floored at one ulp of
    the output grid and the center is nudged inside [0, 1] so the rounded
    line always satisfies the parser's bounds.
    """
    ulp = 10.0 ** (-decimals)
    b = annotation.box
    w = max(round(b.w, decimals), ulp)
    h = max(round(b.h, decimals), ulp)
    cx = min(max(b.cx, w / 2), 1.0 - w / 2) if w < 1.0 else 0.5
    cy = min(max(b.cy, h / 2), 1.0 - h / 2) if h < 1.0 else 0.5
    return f"{annotation.class_id} {cx:.{decimals}f} {cy:.{decimals}f} {w:.{decimals}f} {h:.{decimals}f}"


def serialize_detection(det: Detection, decimals: int = 6) -> str:
    line = serialize_annotation(Annotation(det.class_id, det.box), decimals)
    return f"{line} {det.confidence:.{decimals}f}"


def read_label_file(path: str | Path, n_classes: int) -> list[Annotation]:
    return [
        parse_label_line(line, n_classes)
        for line in Path(path).read_text().splitlines()
        if line.strip()
    ]


def read_prediction_file(path: str | Path, n_classes: int) -> list[Detection]:
    return [
        parse_prediction_line(line, n_classes)
        for line in Path(path).read_text().splitlines()
        if line.strip()
    ]


def write_label_file(path: str | Path, annotations: list[Annotation], decimals: int = 6) -> None:
    Path(path).write_text("".join(serialize_annotation(a, decimals) + "\n" for a in annotations))


def write_prediction_file(path: str | Path, detections: list[Detection], decimals: int = 6) -> None:
    Path(path).write_text("".join(serialize_detection(d, decimals) + "\n" for d in detections))


@dataclass
class DatasetManifest:
    classes: list[ComponentClass]
    records: list[ImageRecord]
    split_ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    seed: int = 0

    def __post_init__(self):
        self.classes = list(self.classes)
        self.records = list(self.records)
        self.split_ratios = tuple(self.split_ratios)
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise BadRatios(f"split ratios {self.split_ratios} do not sum to 1")
        ids = [c.id for c in self.classes]
        if ids != list(range(len(self.classes))):
            raise DataError(f"class ids must be contiguous from 0, got {ids}")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise DuplicateId(f"duplicate class names: {names}")
        seen: set[str] = set()
        for r in self.records:
            if r.id in seen:
                raise DuplicateId(f"duplicate record id {r.id!r}")
            seen.add(r.id)

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def records_for(self, split: str) -> list[ImageRecord]:
        return [r for r in self.records if r.split == split]

    def counts(self) -> dict[str, int]:
        out = {s: 0 for s in SPLITS}
        for r in self.records:
            out[r.split] += 1
        return out

    def to_dict(self) -> dict:
        return {
            "classes": [{"id": c.id, "name": c.name} for c in self.classes],
            "split_ratios": list(self.split_ratios),
            "seed": self.seed,
            "records": [
                {
                    "id": r.id,
                    "path": r.path,
                    "width": r.width,
                    "height": r.height,
                    "split": r.split,
                    "provenance": (
                        {"source_id": r.provenance.source_id, "chain": list(r.provenance.chain)}
                        if r.provenance
                        else None
                    ),
                }
                for r in self.records
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        return cls(
            classes=[ComponentClass(c["id"], c["name"]) for c in data["classes"]],
            records=[
                ImageRecord(
                    id=r["id"],
                    path=r["path"],
                    width=r["width"],
                    height=r["height"],
                    split=r.get("split", "unassigned"),
                    provenance=(
                        Provenance(r["provenance"]["source_id"], tuple(r["provenance"]["chain"]))
                        if r.get("provenance")
                        else None
                    ),
                )
                for r in data["records"]
            ],
            split_ratios=tuple(data["split_ratios"]),
            seed=data["seed"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


def split_counts(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Train/val sizes floor; test takes the remainder. 250 @ 70-20-10 -> 175/50/25."""
    n_train = math.floor(n * ratios[0])
    n_val = math.floor(n * ratios[1])
    return n_train, n_val, n - n_train - n_val


def split_dataset(
    records: list[ImageRecord],
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1),
    seed: int = 0,
    classes: list[ComponentClass] | None = None,
) -> DatasetManifest:
    """Deterministically partition records into train/val/test."""
    if not records:
        raise EmptyDataset("no records to split")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios {ratios} must be three non-negative fractions summing to 1")

    order = list(range(len(records)))
    random.Random(seed).shuffle(order)
    n_train, n_val, _ = split_counts(len(records), tuple(ratios))

    assigned = []
    for rank, idx in enumerate(order):
        split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
        assigned.append((idx, split))
    by_input = sorted(assigned)
    new_records = [replace(records[idx], split=split) for idx, split in by_input]
    return DatasetManifest(
        classes=list(classes) if classes is not None else list(CANONICAL_CLASSES),
        records=new_records,
        split_ratios=tuple(ratios),
        seed=seed,
    )


def label_path_for(image_path: str | Path) -> Path:
    """Label file for an image: sibling ``labels/`` dir when the image lives
    under ``images/``, otherwise alongside the image."""
    p = Path(image_path)
    if p.parent.name == "images":
        return p.parent.parent / "labels" / (p.stem + ".txt")
    return p.with_suffix(".txt")
