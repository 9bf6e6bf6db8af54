"""Training loop that speaks the harness protocol.

One JSON record per epoch on stdout (``epoch``, ``map50``, ``ap_per_class``,
``seconds``), flushed immediately, then a STOP-file poll in the run
directory. All diagnostics go to stderr so stdout stays protocol-clean.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import torch
import torchvision

from .dataset import DetectionDataset, collate, load_manifest
from .metrics import ap50_per_class

DEFAULT_MODEL = "fasterrcnn_mobilenet_v3_large_320_fpn"


@dataclass
class AdapterConfig:
    manifest_path: Path
    model_name: str = DEFAULT_MODEL
    epochs: int = 100
    image_size: int = 640
    run_dir: Path = Path(".")
    batch_size: int = 4
    lr: float = 0.005
    seed: int = 0
    device: str = "cpu"

    def validate(self) -> None:
        if not self.manifest_path.exists():
            raise FileNotFoundError(f"manifest not found: {self.manifest_path}")
        if not self.run_dir.is_dir():
            raise NotADirectoryError(f"run directory does not exist: {self.run_dir}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def build_model(model_name: str, num_classes: int):
    """num_classes includes the background slot."""
    factory = getattr(torchvision.models.detection, model_name, None)
    if factory is None:
        raise ValueError(f"unknown torchvision detection model: {model_name}")
    return factory(weights=None, weights_backbone=None, num_classes=num_classes)


def log(message: str) -> None:
    print(f"[trainer-adapter] {message}", file=sys.stderr, flush=True)


def train_and_stream(config: AdapterConfig) -> int:
    config.validate()
    torch.manual_seed(config.seed)

    manifest = load_manifest(config.manifest_path)
    n_classes = len(manifest.class_names)
    train_records = manifest.split("train")
    val_records = manifest.split("val") or train_records
    if not train_records:
        log("manifest has no train records")
        return 2
    mismatched = [r.id for r in train_records if (r.width, r.height) != (config.image_size, config.image_size)]
    if mismatched:
        log(f"warning: {len(mismatched)} train images are not {config.image_size}x{config.image_size}")

    device = torch.device(config.device)
    model = build_model(config.model_name, n_classes + 1).to(device)
    optimizer = torch.optim.SGD(model.parameters(), lr=config.lr, momentum=0.9, weight_decay=5e-4)

    train_loader = torch.utils.data.DataLoader(
        DetectionDataset(train_records),
        batch_size=config.batch_size,
        shuffle=True,
        collate_fn=collate,
        num_workers=0,
    )
    val_dataset = DetectionDataset(val_records)

    artifacts = config.run_dir / "artifacts"
    artifacts.mkdir(parents=True, exist_ok=True)
    stop_file = config.run_dir / "STOP"

    log(f"training {config.model_name} on {len(train_records)} images "
        f"({len(val_records)} val), cap {config.epochs} epochs")

    for epoch in range(1, config.epochs + 1):
        started = time.monotonic()
        model.train()
        for images_batch, targets in train_loader:
            images_batch = [img.to(device) for img in images_batch]
            targets = [{k: v.to(device) for k, v in t.items()} for t in targets]
            loss_dict = model(images_batch, targets)
            loss = sum(loss_dict.values())
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

        ap = evaluate(model, val_dataset, n_classes, device)
        seconds = time.monotonic() - started
        record = {
            "epoch": epoch,
            "map50": float(sum(ap.values()) / len(ap)) if ap else 0.0,
            "ap_per_class": {manifest.class_names[c]: v for c, v in ap.items()},
            "seconds": seconds,
        }
        print(json.dumps(record), flush=True)

        torch.save(
            {
                "model_name": config.model_name,
                "class_names": manifest.class_names,
                "image_size": config.image_size,
                "state_dict": model.state_dict(),
            },
            artifacts / "weights.pt",
        )
        if stop_file.exists():
            log(f"STOP observed after epoch {epoch}; exiting")
            return 0
    log("epoch cap reached")
    return 0


@torch.no_grad()
def evaluate(model, dataset, n_classes: int, device) -> dict[int, float]:
    model.eval()
    predictions = []
    targets = []
    for idx in range(len(dataset)):
        image, target = dataset[idx]
        (output,) = model([image.to(device)])
        predictions.append(
            {
                "boxes": output["boxes"].cpu().numpy(),
                "labels": output["labels"].cpu().numpy() - 1,
                "scores": output["scores"].cpu().numpy(),
            }
        )
        targets.append(
            {
                "boxes": target["boxes"].numpy(),
                "labels": target["labels"].numpy() - 1,
            }
        )
    return ap50_per_class(predictions, targets, n_classes)
