import numpy as np
import pytest

from gridsight.augment import (
    AugmentPlan,
    HueSpec,
    RotationSpec,
    expand_dataset,
    hue_shift,
    plan_expansion,
    rotate_annotations,
    rotate_bbox,
    rotate_image,
    rotated_envelope,
)
from gridsight.errors import NameCollision
from gridsight.model import (
    Annotation,
    CANONICAL_CLASSES,
    DatasetManifest,
    ImageRecord,
    NormalizedBBox,
    PixelBBox,
    read_label_file,
    split_dataset,
    write_label_file,
)
from gridsight import images

import oracles


class TestRotateImage:
    def test_zero_is_bit_identical(self, rng):
        img = rng.integers(0, 256, (50, 70, 3), dtype=np.uint8)
        out = rotate_image(img, 0.0)
        assert out is not img
        assert np.array_equal(out, img)

    def test_canvas_size_unchanged(self, rng):
        img = rng.integers(0, 256, (60, 100, 3), dtype=np.uint8)
        for theta in (15, 30, -15, -30, 45, 180):
            assert rotate_image(img, theta).shape == img.shape

    def test_180_twice_recovers_original(self, rng):
        img = rng.integers(0, 256, (80, 80, 3), dtype=np.uint8)
        out = rotate_image(rotate_image(img, 180.0), 180.0)
        diff = np.abs(out.astype(int) - img.astype(int))
        assert diff.mean() < 1.0

    def test_white_pixel_quarter_turn(self):
        img = np.zeros((100, 100, 3), dtype=np.uint8)
        img[50, 75] = 255  # pixel at (x=75, y=50)
        out = rotate_image(img, 90.0)
        bright = np.unravel_index(out.sum(axis=2).argmax(), out.shape[:2])
        y, x = bright
        # expected near the oracle's rotation of (75, 50) about (49.5, 49.5)
        ox, oy = oracles.rotate_point(75, 50, 49.5, 49.5, 90.0)
        assert abs(x - 50) <= 1 and abs(y - 75) <= 1
        assert abs(x - ox) <= 1 and abs(y - oy) <= 1

    def test_exposed_corners_black(self, rng):
        img = np.full((64, 64, 3), 200, dtype=np.uint8)
        out = rotate_image(img, 45.0)
        assert tuple(out[0, 0]) == (0, 0, 0)
        assert tuple(out[0, -1]) == (0, 0, 0)
        assert tuple(out[-1, 0]) == (0, 0, 0)
        assert tuple(out[-1, -1]) == (0, 0, 0)
        assert out[32, 32, 0] > 150

    def test_negative_theta_is_opposite_direction(self):
        img = np.zeros((100, 100, 3), dtype=np.uint8)
        img[50, 75] = 255
        out = rotate_image(img, -90.0)
        y, x = np.unravel_index(out.sum(axis=2).argmax(), out.shape[:2])
        ox, oy = oracles.rotate_point(75, 50, 49.5, 49.5, -90.0)
        assert abs(x - ox) <= 1 and abs(y - oy) <= 1


class TestRotateBBox:
    def test_identity(self):
        box = PixelBBox(10, 20, 30, 50)
        out = rotate_bbox(box, 0.0, 100, 100)
        assert out == box

    def test_centered_square_45_degrees(self):
        out = rotate_bbox(PixelBBox(40, 40, 60, 60), 45.0, 100, 100)
        side = 20 * (abs(np.cos(np.radians(45))) + abs(np.sin(np.radians(45))))
        assert abs(side - 28.284271) < 1e-5
        assert abs(out.xmin - 35.857864) < 1e-6
        assert abs(out.ymin - 35.857864) < 1e-6
        assert abs(out.xmax - 64.142136) < 1e-6
        assert abs(out.ymax - 64.142136) < 1e-6

    def test_centered_20x10_quarter_turn(self):
        out = rotate_bbox(PixelBBox(40, 45, 60, 55), 90.0, 100, 100)
        assert abs(out.xmin - 45) < 1e-9
        assert abs(out.xmax - 55) < 1e-9
        assert abs(out.ymin - 40) < 1e-9
        assert abs(out.ymax - 60) < 1e-9

    def test_matches_corner_oracle(self, rng):
        for _ in range(300):
            x0, y0 = rng.uniform(5, 60, 2)
            w, h = rng.uniform(1, 30, 2)
            theta = float(rng.uniform(-179, 180))
            got = rotated_envelope(PixelBBox(x0, y0, x0 + w, y0 + h), theta, 100, 100)
            want = oracles.envelope_of_rotated_box((x0, y0, x0 + w, y0 + h), theta, 100, 100)
            assert abs(got.xmin - want[0]) < 1e-9
            assert abs(got.ymin - want[1]) < 1e-9
            assert abs(got.xmax - want[2]) < 1e-9
            assert abs(got.ymax - want[3]) < 1e-9

    def test_envelope_area_never_shrinks(self, rng):
        # mathematical property of the pre-clip envelope; huge canvas so the
        # clip never bites
        for _ in range(2000):
            x0, y0 = rng.uniform(900, 1000, 2)
            w, h = rng.uniform(0.5, 100, 2)
            theta = float(rng.uniform(-179, 180))
            box = PixelBBox(x0, y0, x0 + w, y0 + h)
            out = rotate_bbox(box, theta, 2000, 2000)
            assert out is not None
            assert out.area >= box.area - 1e-9

    def test_drop_when_rotated_out_of_frame(self):
        # corner box swings outside on a quarter turn
        out = rotate_bbox(PixelBBox(0, 0, 4, 4), 90.0, 100, 10)
        assert out is None

    def test_drop_tiny_clipped_remnant(self):
        # 0.5 x 0.5 box stays under the 1 px^2 floor wherever it lands
        out = rotate_bbox(PixelBBox(50, 50, 50.5, 50.5), 10.0, 100, 100)
        assert out is None

    def test_back_rotation_contains_original(self, rng):
        for _ in range(500):
            x0, y0 = rng.uniform(400, 500, 2)
            w, h = rng.uniform(2, 60, 2)
            theta = float(rng.uniform(-90, 90))
            box = PixelBBox(x0, y0, x0 + w, y0 + h)
            there = rotate_bbox(box, theta, 1000, 1000)
            back = rotate_bbox(there, -theta, 1000, 1000)
            assert back.xmin <= box.xmin + 1e-9
            assert back.ymin <= box.ymin + 1e-9
            assert back.xmax >= box.xmax - 1e-9
            assert back.ymax >= box.ymax - 1e-9

    def test_rotated_labels_satisfy_invariants(self, rng):
        for _ in range(300):
            w = float(rng.uniform(0.05, 0.5))
            h = float(rng.uniform(0.05, 0.5))
            cx = float(rng.uniform(w / 2, 1 - w / 2))
            cy = float(rng.uniform(h / 2, 1 - h / 2))
            theta = float(rng.uniform(-179, 180))
            annos = [Annotation(0, NormalizedBBox(cx, cy, w, h))]
            # construction re-validates every invariant
            rotate_annotations(annos, theta, 640, 640)


class TestHueShift:
    def test_zero_delta_identity(self, rng):
        img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        assert np.array_equal(hue_shift(img, 0.0), img)

    def test_achromatic_unchanged(self):
        img = np.stack([np.full((8, 8), v, dtype=np.uint8) for v in (77, 77, 77)], axis=-1)
        for delta in (-15, -7.5, 3, 15, 180):
            assert np.array_equal(hue_shift(img, delta), img)

    def test_pure_red_plus_15(self):
        img = np.zeros((1, 1, 3), dtype=np.uint8)
        img[0, 0] = (255, 0, 0)
        out = hue_shift(img, 15.0)
        r, g, b = out[0, 0]
        assert abs(int(r) - 255) <= 1
        assert abs(int(g) - 64) <= 1
        assert abs(int(b) - 0) <= 1

    def test_matches_colorsys_oracle(self, rng):
        img = rng.integers(0, 256, (6, 6, 3), dtype=np.uint8)
        for delta in (-15.0, -3.2, 7.7, 15.0, 120.0):
            out = hue_shift(img, delta)
            for y in range(6):
                for x in range(6):
                    want = oracles.hue_rotate_pixel(*img[y, x].tolist(), delta)
                    got = tuple(int(v) for v in out[y, x])
                    assert all(abs(a - b) <= 1 for a, b in zip(got, want)), (img[y, x], delta)

    def test_value_preserved_exactly(self, rng):
        img = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
        for delta in (-15.0, 5.0, 14.9):
            out = hue_shift(img, delta)
            assert np.array_equal(out.max(axis=2), img.max(axis=2))

    def test_saturation_within_one_step(self, rng):
        img = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
        out = hue_shift(img, 11.0)

        def sat(a):
            mx = a.max(axis=2).astype(np.float64)
            mn = a.min(axis=2).astype(np.float64)
            return np.where(mx > 0, (mx - mn) / np.maximum(mx, 1), 0.0)

        assert np.abs(sat(out) - sat(img)).max() <= 1.0 / 255 + 1e-9


def build_dataset(tmp_path, n, size=8, with_labels=True, ratios=(0.7, 0.2, 0.1), seed=0):
    root = tmp_path / "data"
    (root / "images").mkdir(parents=True)
    (root / "labels").mkdir()
    rng = np.random.default_rng(42)
    records = []
    for i in range(n):
        img = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
        path = root / "images" / f"img{i:04d}.png"
        images.write_png(path, img)
        if with_labels:
            write_label_file(
                root / "labels" / f"img{i:04d}.txt",
                [Annotation(i % 3, NormalizedBBox(0.5, 0.5, 0.5, 0.5))],
            )
        records.append(ImageRecord(id=f"img{i:04d}", path=f"images/img{i:04d}.png", width=size, height=size))
    manifest = split_dataset(records, ratios, seed=seed)
    manifest.save(root / "manifest.json")
    return root, manifest


PAPER_ROTATIONS = tuple(RotationSpec(t) for t in (15.0, 30.0, -15.0, -30.0))


class TestExpansion:
    def test_empty_plan_is_identity(self, tmp_path):
        root, manifest = build_dataset(tmp_path, 10)
        plan = AugmentPlan(rotations=(), hue=HueSpec(copies=0))
        out = expand_dataset(manifest, plan, root, tmp_path / "out")
        assert [r.id for r in out.records] == [r.id for r in manifest.records]
        assert out.counts() == manifest.counts()

    def test_default_plan_follows_pinned_hue_copies(self):
        assert HueSpec().copies == 2
        assert AugmentPlan().hue.copies == 2

    def test_paper_scale_formula_with_hue(self, tmp_path):
        # 175 train x (1+4 rotations) x (1+2 hue copies) - originals = 2450 generated
        root, manifest = build_dataset(tmp_path, 250, ratios=(0.7, 0.2, 0.1), seed=42)
        assert manifest.counts()["train"] == 175
        plan = AugmentPlan(rotations=PAPER_ROTATIONS, hue=HueSpec(copies=2, seed=1))
        generated = plan_expansion(manifest, plan)
        assert len(generated) + 175 == 2625

    def test_plan_count_formula(self, tmp_path):
        root, manifest = build_dataset(tmp_path, 20)
        train = manifest.counts()["train"]
        plan = AugmentPlan(rotations=PAPER_ROTATIONS, hue=HueSpec(copies=2, seed=1))
        generated = plan_expansion(manifest, plan)
        assert len(generated) == train * ((1 + 4) * (1 + 2) - 1)

    def test_generated_ids_and_provenance(self, tmp_path):
        root, manifest = build_dataset(tmp_path, 5, ratios=(1.0, 0.0, 0.0))
        plan = AugmentPlan(rotations=(RotationSpec(15.0), RotationSpec(-30.0)), hue=HueSpec(copies=1, seed=3))
        out = expand_dataset(manifest, plan, root, tmp_path / "out")
        ids = {r.id for r in out.records}
        assert "img0000__rot15" in ids
        assert "img0000__rot-30" in ids
        hue_ids = [r for r in out.records if r.provenance and any(c.startswith("hue") for c in r.provenance.chain)]
        assert len(hue_ids) == 5 * 3  # one hue copy of the original and of each rotation
        rec = next(r for r in out.records if r.id == "img0000__rot15")
        assert rec.provenance.source_id == "img0000"
        assert rec.provenance.chain == ("rot15",)

    def test_val_test_bytes_untouched(self, tmp_path):
        root, manifest = build_dataset(tmp_path, 10, ratios=(0.5, 0.3, 0.2))
        originals = {
            r.id: (root / r.path).read_bytes()
            for r in manifest.records
            if r.split in ("val", "test")
        }
        plan = AugmentPlan(rotations=(RotationSpec(15.0),), hue=HueSpec(copies=1, seed=2))
        out_root = tmp_path / "out"
        out = expand_dataset(manifest, plan, root, out_root)
        for r in out.records:
            if r.split in ("val", "test"):
                assert (out_root / r.path).read_bytes() == originals[r.id]
        assert out.counts()["val"] == manifest.counts()["val"]
        assert out.counts()["test"] == manifest.counts()["test"]

    def test_generated_labels_parse_and_satisfy_invariants(self, tmp_path):
        root, manifest = build_dataset(tmp_path, 6, size=64, ratios=(1.0, 0.0, 0.0))
        plan = AugmentPlan(rotations=PAPER_ROTATIONS, hue=HueSpec(copies=1, seed=9))
        out_root = tmp_path / "out"
        out = expand_dataset(manifest, plan, root, out_root)
        for r in out.records:
            label = out_root / "labels" / (r.id + ".txt")
            assert label.exists()
            read_label_file(label, out.n_classes)  # validates every line

    def test_name_collision(self, tmp_path):
        root, manifest = build_dataset(tmp_path, 2, ratios=(1.0, 0.0, 0.0))
        clashing = manifest.records + [
            ImageRecord(id="img0000__rot15", path="images/img0000.png", width=8, height=8, split="train")
        ]
        manifest2 = DatasetManifest(
            classes=list(CANONICAL_CLASSES), records=clashing, split_ratios=(1.0, 0.0, 0.0), seed=0
        )
        with pytest.raises(NameCollision):
            plan_expansion(manifest2, AugmentPlan(rotations=(RotationSpec(15.0),)))

    def test_hue_deltas_seeded_and_signed(self, tmp_path):
        root, manifest = build_dataset(tmp_path, 4, ratios=(1.0, 0.0, 0.0))
        plan = AugmentPlan(hue=HueSpec(max_tint=15.0, copies=2, seed=11))
        a = plan_expansion(manifest, plan)
        b = plan_expansion(manifest, plan)
        assert [g.new_id for g in a] == [g.new_id for g in b]
        deltas = [g.hue_delta for g in a]
        assert all(-15.0 <= d <= 15.0 for d in deltas)
        warm = deltas[0::2]
        cool = deltas[1::2]
        assert all(d <= 0 for d in warm)
        assert all(d >= 0 for d in cool)
