import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

CLASS_NAMES = ["transformer", "circuit_breaker", "reactor"]
# saturated colors so even a barely-trained model has edges to latch onto
CLASS_COLORS = [(220, 40, 40), (40, 220, 40), (40, 40, 220)]


def draw_scene(rng, size):
    """Gray background with 1-3 colored rectangles; returns image + labels."""
    image = np.full((size, size, 3), 90, dtype=np.uint8)
    noise = rng.integers(0, 25, size=(size, size, 3), dtype=np.uint8)
    image = np.clip(image.astype(int) + noise, 0, 255).astype(np.uint8)
    lines = []
    for _ in range(int(rng.integers(1, 4))):
        cls = int(rng.integers(3))
        w = int(rng.integers(size // 8, size // 3))
        h = int(rng.integers(size // 8, size // 3))
        x0 = int(rng.integers(0, size - w))
        y0 = int(rng.integers(0, size - h))
        image[y0 : y0 + h, x0 : x0 + w] = CLASS_COLORS[cls]
        cx = (x0 + w / 2) / size
        cy = (y0 + h / 2) / size
        lines.append(f"{cls} {cx:.6f} {cy:.6f} {w / size:.6f} {h / size:.6f}")
    return image, lines


def build_synthetic_dataset(root: Path, n_images=20, size=640, n_val=4, seed=7):
    """Letterbox-shaped square dataset in the pipeline's on-disk layout."""
    rng = np.random.default_rng(seed)
    (root / "images").mkdir(parents=True)
    (root / "labels").mkdir()
    records = []
    for i in range(n_images):
        image, lines = draw_scene(rng, size)
        name = f"synth{i:03d}"
        Image.fromarray(image).save(root / "images" / f"{name}.png")
        (root / "labels" / f"{name}.txt").write_text("".join(line + "\n" for line in lines))
        split = "val" if i < n_val else "train"
        records.append(
            {
                "id": name,
                "path": f"images/{name}.png",
                "width": size,
                "height": size,
                "split": split,
                "provenance": None,
            }
        )
    manifest = {
        "classes": [{"id": i, "name": n} for i, n in enumerate(CLASS_NAMES)],
        "split_ratios": [0.8, 0.2, 0.0],
        "seed": seed,
        "records": records,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return root / "manifest.json"


@pytest.fixture(scope="session")
def synthetic_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    return build_synthetic_dataset(root)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small images for fast unit-level runs."""
    root = tmp_path_factory.mktemp("tiny")
    return build_synthetic_dataset(root, n_images=8, size=160, n_val=2)
