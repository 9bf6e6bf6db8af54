"""Inference to prediction files: one ``class cx cy w h conf`` line per box."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .train import build_model, log

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def load_checkpoint(weights_path: Path, device: str = "cpu"):
    checkpoint = torch.load(weights_path, map_location=device, weights_only=True)
    model = build_model(checkpoint["model_name"], len(checkpoint["class_names"]) + 1)
    model.load_state_dict(checkpoint["state_dict"])
    model.eval()
    return model, checkpoint["class_names"]


@torch.no_grad()
def predict_to_files(
    weights_path: Path,
    image_dir: Path,
    out_dir: Path,
    conf_floor: float = 0.25,
    device: str = "cpu",
) -> int:
    if not weights_path.exists():
        log(f"weights not found: {weights_path}")
        return 2
    model, class_names = load_checkpoint(weights_path, device)
    out_dir.mkdir(parents=True, exist_ok=True)

    paths = sorted(p for p in Path(image_dir).iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
    if not paths:
        log(f"no images under {image_dir}")
        return 2

    for path in paths:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        height, width = rgb.shape[:2]
        tensor = torch.from_numpy(rgb).permute(2, 0, 1).to(device)
        (output,) = model([tensor])

        lines = []
        for box, label, score in zip(
            output["boxes"].cpu().numpy(),
            output["labels"].cpu().numpy(),
            output["scores"].cpu().numpy(),
        ):
            if score < conf_floor:
                continue
            x0 = min(max(float(box[0]), 0.0), width)
            y0 = min(max(float(box[1]), 0.0), height)
            x1 = min(max(float(box[2]), 0.0), width)
            y1 = min(max(float(box[3]), 0.0), height)
            if x1 - x0 < 1e-3 or y1 - y0 < 1e-3:
                continue
            cx = (x0 + x1) / 2 / width
            cy = (y0 + y1) / 2 / height
            w = (x1 - x0) / width
            h = (y1 - y0) / height
            conf = min(max(float(score), 0.0), 1.0)
            lines.append(f"{int(label) - 1} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f} {conf:.6f}")
        (out_dir / (path.stem + ".txt")).write_text("".join(line + "\n" for line in lines))
    log(f"wrote predictions for {len(paths)} images to {out_dir}")
    return 0
