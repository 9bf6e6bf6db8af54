"""Dataset loading from the pipeline's manifest/label file formats.

This package talks to the pipeline only through its on-disk formats: the
manifest JSON (classes, records with id/path/split) and YOLO-style label
files (``class cx cy w h``, normalized) living in a ``labels/`` directory
beside ``images/``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image


@dataclass
class ManifestRecord:
    id: str
    path: Path
    width: int
    height: int
    split: str


@dataclass
class Manifest:
    class_names: list[str]
    records: list[ManifestRecord]

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    doc = json.loads(path.read_text())
    classes = sorted(doc["classes"], key=lambda c: c["id"])
    records = []
    for r in doc["records"]:
        p = Path(r["path"])
        if not p.is_absolute():
            p = path.parent / p
        records.append(
            ManifestRecord(id=r["id"], path=p, width=r["width"], height=r["height"], split=r["split"])
        )
    return Manifest(class_names=[c["name"] for c in classes], records=records)


def label_path_for(image_path: Path) -> Path:
    if image_path.parent.name == "images":
        return image_path.parent.parent / "labels" / (image_path.stem + ".txt")
    return image_path.with_suffix(".txt")


def read_boxes(label_path: Path, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Label lines to pixel xyxy boxes and class ids."""
    boxes = []
    labels = []
    if label_path.exists():
        for line in label_path.read_text().splitlines():
            fields = line.split()
            if len(fields) != 5:
                continue
            cls = int(fields[0])
            cx, cy, w, h = (float(v) for v in fields[1:])
            boxes.append(
                [
                    (cx - w / 2) * width,
                    (cy - h / 2) * height,
                    (cx + w / 2) * width,
                    (cy + h / 2) * height,
                ]
            )
            labels.append(cls)
    if not boxes:
        return np.zeros((0, 4), dtype=np.float32), np.zeros((0,), dtype=np.int64)
    return np.asarray(boxes, dtype=np.float32), np.asarray(labels, dtype=np.int64)


class DetectionDataset(torch.utils.data.Dataset):
    """Images plus torchvision-style targets; class ids shifted by one so
    zero stays the background."""

    def __init__(self, records: list[ManifestRecord]):
        self.records = records

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, idx: int):
        record = self.records[idx]
        with Image.open(record.path) as im:
            image = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        boxes, labels = read_boxes(label_path_for(record.path), record.width, record.height)
        target = {
            "boxes": torch.from_numpy(boxes),
            "labels": torch.from_numpy(labels) + 1,
            "image_id": torch.tensor(idx),
        }
        return torch.from_numpy(image).permute(2, 0, 1), target


def collate(batch):
    return tuple(zip(*batch))
