"""Command-line entry point exposing the pipeline as subcommands.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 external
service error, 4 adapter/protocol error. Every subcommand writes only under
its --output directory. A JSON config file (--config) supplies defaults
using the same keys as the long flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import augment, census, evaluation, geotile, harness, images, model, preprocess
from .errors import GridsightError, UsageError

PROVIDER_TOKEN_ENV = "GRIDSIGHT_PROVIDER_TOKEN"
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _ratios(text: str) -> tuple[float, float, float]:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated fractions")
    return tuple(float(p) for p in parts)


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _classes(text: str) -> list[model.ComponentClass]:
    names = [p.strip() for p in text.split(",") if p.strip()]
    return [model.ComponentClass(i, n) for i, n in enumerate(names)]


def build_parser(config: dict | None = None) -> argparse.ArgumentParser:
    cfg = config or {}

    def default(key, fallback):
        return cfg.get(key, fallback)

    parser = _Parser(prog="gridsight", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file of flag defaults", default=None)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("split", help="assign train/val/test splits and write a manifest")
    p.add_argument("--input", required=True, help="dataset root containing images/ (and labels/)")
    p.add_argument("--ratios", type=_ratios, default=default("ratios", (0.7, 0.2, 0.1)))
    p.add_argument("--seed", type=int, default=default("seed", 0))
    p.add_argument("--classes", type=_classes, default=default("classes", "transformer,circuit_breaker,reactor"))
    p.add_argument("--output", required=True)

    p = sub.add_parser("preprocess", help="auto-orient and letterbox a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--target", type=int, default=default("target", preprocess.DEFAULT_TARGET))
    p.add_argument("--output", required=True)

    p = sub.add_parser("augment", help="expand the train split with rotations and hue shifts")
    p.add_argument("--manifest", required=True)
    p.add_argument("--rotations", type=_float_list, default=default("rotations", (15.0, 30.0, -15.0, -30.0)))
    p.add_argument("--hue-copies", type=int, default=default("hue_copies", 2))
    p.add_argument("--max-tint", type=float, default=default("max_tint", 15.0))
    p.add_argument("--seed", type=int, default=default("seed", 0))
    p.add_argument("--output", required=True)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--gt", required=True, help="directory of label files")
    p.add_argument("--pred", required=True, help="directory of prediction files")
    p.add_argument("--iou", type=float, default=default("iou", 0.5))
    p.add_argument("--conf", type=float, default=default("conf", 0.5), help="confusion-matrix confidence threshold")
    p.add_argument("--classes", type=_classes, default=default("classes", "transformer,circuit_breaker,reactor"))
    p.add_argument("--format", choices=("table", "json"), default=default("format", "table"))
    p.add_argument("--output", default=None, help="directory for report files")

    p = sub.add_parser("train", help="supervise an external trainer adapter")
    p.add_argument("--adapter", required=True, help="adapter command line")
    p.add_argument("--model-name", required=True)
    p.add_argument("--component", required=True)
    p.add_argument("--max-epochs", type=int, default=default("max_epochs", 100))
    p.add_argument("--patience", type=int, default=default("patience", 15))
    p.add_argument("--min-delta", type=float, default=default("min_delta", 0.0))
    p.add_argument("--epoch-timeout", type=float, default=default("epoch_timeout", None))
    p.add_argument("--output", required=True, help="run directory")

    p = sub.add_parser("fetch-tiles", help="download imagery tiles for sites")
    p.add_argument("--sites", required=True, help="CSV of site_id, lat, lon")
    p.add_argument("--provider", required=True, help="URL template with {px} etc., or stub:<dir>")
    p.add_argument("--side", type=float, default=default("side", geotile.DEFAULT_SIDE_M))
    p.add_argument("--candidates", type=_int_list, default=default("candidates", geotile.DEFAULT_CANDIDATES))
    p.add_argument("--jobs", type=int, default=default("jobs", 1))
    p.add_argument("--id-column", default=default("id_column", "site_id"))
    p.add_argument("--lat-column", default=default("lat_column", "lat"))
    p.add_argument("--lon-column", default=default("lon_column", "lon"))
    p.add_argument("--output", required=True, help="tile store directory")

    p = sub.add_parser("census", help="count components across site predictions")
    p.add_argument("--sites", required=True)
    p.add_argument("--predictions", default=None, help="directory of <site_id>.txt prediction files")
    p.add_argument("--detector", default=None, help="command with {image} and {output} placeholders")
    p.add_argument("--images", default=None, help="directory of <site_id>.png tiles (detector mode)")
    p.add_argument("--conf", type=float, default=default("conf", census.DEFAULT_CONF_THRESH))
    p.add_argument("--classes", type=_classes, default=default("classes", "transformer,circuit_breaker,reactor"))
    p.add_argument("--jobs", type=int, default=default("jobs", 1))
    p.add_argument("--id-column", default=default("id_column", "site_id"))
    p.add_argument("--lat-column", default=default("lat_column", "lat"))
    p.add_argument("--lon-column", default=default("lon_column", "lon"))
    p.add_argument("--format", choices=("table", "json"), default=default("format", "table"))
    p.add_argument("--output", required=True)

    p = sub.add_parser("report", help="render comparison tables from training results")
    p.add_argument("results", nargs="+", help="run directories or result files")
    p.add_argument("--format", choices=("table", "json"), default=default("format", "table"))
    p.add_argument("--output", default=None)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        config = _load_config(argv)
        parser = build_parser(config)
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        handler = _HANDLERS[args.command]
        handler(args)
        return 0
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except GridsightError as e:
        print(f"gridsight: error: {e}", file=sys.stderr)
        return e.exit_code
    except (OSError, ValueError) as e:
        print(f"gridsight: error: {e}", file=sys.stderr)
        return 2


def _load_config(argv: list[str]) -> dict:
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif arg.startswith("--config="):
            path = arg.split("=", 1)[1]
        else:
            continue
        try:
            return json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {path} is not valid JSON: {e}") from None
    return {}


def _scan_images(root: Path) -> list[model.ImageRecord]:
    from PIL import Image

    images_dir = root / "images" if (root / "images").is_dir() else root
    records = []
    for path in sorted(images_dir.iterdir()):
        if path.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        with Image.open(path) as im:
            width, height = im.size
        records.append(
            model.ImageRecord(id=path.stem, path=str(path.resolve()), width=width, height=height)
        )
    return records


def _cmd_split(args) -> None:
    records = _scan_images(Path(args.input))
    manifest = model.split_dataset(records, args.ratios, args.seed, classes=_as_classes(args.classes))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    manifest.save(out / "manifest.json")
    counts = manifest.counts()
    print(f"split {len(records)} records: {counts['train']} train / {counts['val']} val / {counts['test']} test")
    print(f"wrote {out / 'manifest.json'}")


def _as_classes(value) -> list[model.ComponentClass]:
    return _classes(value) if isinstance(value, str) else list(value)


def _cmd_preprocess(args) -> None:
    manifest_path = Path(args.manifest)
    manifest = model.DatasetManifest.load(manifest_path)
    out = Path(args.output)
    images_dir = out / "images"
    labels_dir = out / "labels"
    images_dir.mkdir(parents=True, exist_ok=True)
    labels_dir.mkdir(parents=True, exist_ok=True)

    new_records = []
    for record in manifest.records:
        src = Path(record.path)
        if not src.is_absolute():
            src = manifest_path.parent / src
        raster = images.read_image(src)
        raster = preprocess.auto_orient(raster, images.read_orientation(src))
        src_h, src_w = raster.shape[:2]
        boxed, transform = preprocess.letterbox(raster, args.target)

        label_path = model.label_path_for(src)
        annotations = model.read_label_file(label_path, manifest.n_classes) if label_path.exists() else []
        projected = preprocess.project_annotations(annotations, src_w, src_h, transform)

        dst = images_dir / (record.id + ".png")
        images.write_png(dst, boxed)
        model.write_label_file(labels_dir / (record.id + ".txt"), projected)
        new_records.append(
            model.ImageRecord(
                id=record.id,
                path=str(dst.relative_to(out)),
                width=args.target,
                height=args.target,
                split=record.split,
                provenance=record.provenance,
            )
        )
    new_manifest = model.DatasetManifest(
        classes=manifest.classes,
        records=new_records,
        split_ratios=manifest.split_ratios,
        seed=manifest.seed,
    )
    new_manifest.save(out / "manifest.json")
    print(f"preprocessed {len(new_records)} images to {args.target}x{args.target} under {out}")


def _cmd_augment(args) -> None:
    manifest_path = Path(args.manifest)
    manifest = model.DatasetManifest.load(manifest_path)
    plan = augment.AugmentPlan(
        rotations=tuple(augment.RotationSpec(t) for t in args.rotations),
        hue=augment.HueSpec(max_tint=args.max_tint, copies=args.hue_copies, seed=args.seed),
    )
    out = Path(args.output)
    new_manifest = augment.expand_dataset(manifest, plan, manifest_path.parent, out)
    new_manifest.save(out / "manifest.json")
    counts = new_manifest.counts()
    print(
        f"expanded to {len(new_manifest.records)} records "
        f"({counts['train']} train / {counts['val']} val / {counts['test']} test) under {out}"
    )


def _cmd_evaluate(args) -> None:
    classes = _as_classes(args.classes)
    names = [c.name for c in classes]
    pairs = evaluation.load_directory_pairs(args.gt, args.pred, len(classes))
    image_pairs = [(dets, gts) for _, dets, gts in pairs]
    summary = evaluation.evaluate_matches(image_pairs, len(classes), args.iou)
    matrix = evaluation.confusion_over_images(image_pairs, names, args.iou, args.conf)

    report = evaluation.render_eval_report(summary, matrix, names)
    metrics = evaluation.summary_to_dict(summary, matrix, names)
    if args.format == "json":
        print(json.dumps(metrics, indent=2))
    else:
        print(report, end="")
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report)
        (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
        print(f"wrote {out / 'report.txt'} and {out / 'metrics.json'}", file=sys.stderr)


def _cmd_train(args) -> None:
    policy = harness.StopPolicy(
        max_epochs=args.max_epochs, patience=args.patience, min_delta=args.min_delta
    )
    config = harness.RunConfig(
        run_dir=Path(args.output),
        model_name=args.model_name,
        component_name=args.component,
        policy=policy,
        epoch_timeout=args.epoch_timeout,
    )
    result = harness.run_training(args.adapter, config)
    print(
        f"{result.model_name}/{result.component_name}: best mAP@50 {result.best_map50:.3f} "
        f"at epoch {result.best_epoch}, stopped by {result.stop_reason} after {result.epochs_run} epochs"
    )


def _make_provider(spec: str):
    if spec.startswith("stub:"):
        return geotile.DirectoryTileProvider(spec[len("stub:"):])
    return geotile.HttpTileProvider(spec, token=os.environ.get(PROVIDER_TOKEN_ENV))


def _cmd_fetch_tiles(args) -> None:
    loaded = geotile.load_sites(args.sites, args.id_column, args.lat_column, args.lon_column)
    provider = _make_provider(args.provider)
    store = geotile.TileStore(args.output)
    report = geotile.fetch_sites(
        loaded.sites, store, provider, args.side, tuple(args.candidates), jobs=args.jobs
    )
    report_doc = {
        "fetched": report.fetched,
        "failed": report.failed,
        "row_errors": [{"row": e.row, "message": e.message} for e in loaded.errors],
    }
    (store.root / "fetch_report.json").write_text(json.dumps(report_doc, indent=2) + "\n")
    print(f"fetched {len(report.fetched)} sites, {len(report.failed)} failed, "
          f"{len(loaded.errors)} bad rows; store at {store.root}")


def _cmd_census(args) -> None:
    if bool(args.predictions) == bool(args.detector):
        raise UsageError("census: provide exactly one of --predictions or --detector")
    loaded = geotile.load_sites(args.sites, args.id_column, args.lat_column, args.lon_column)
    classes = _as_classes(args.classes)

    out = Path(args.output)
    if args.predictions:
        detector = census.PrecomputedDetector(args.predictions)
        image_for_site = None
    else:
        if not args.images:
            raise UsageError("census: --detector mode requires --images")
        detector = census.CommandDetector(args.detector, scratch_dir=out / ".scratch")
        images_root = Path(args.images)

        def image_for_site(site_id: str) -> Path:
            for ext in IMAGE_EXTENSIONS:
                candidate = images_root / f"{site_id}{ext}"
                if candidate.exists():
                    return candidate
            return images_root / f"{site_id}.png"

    site_ids = [s.site_id for s in loaded.sites]
    result = census.run_census(
        detector, site_ids, classes, image_for_site, conf_thresh=args.conf, jobs=args.jobs
    )
    paths = census.emit_reports(result, loaded.sites, out)
    if args.format == "json":
        print(json.dumps(result.to_dict(), indent=2))
    else:
        print(census.render_summary(result), end="")
    print(f"wrote {', '.join(str(p) for p in paths.values())}", file=sys.stderr)


def _cmd_report(args) -> None:
    results = [harness.load_result(p) for p in args.results]
    report = harness.compare(results)
    model_table = harness.render_model_table(report)
    component_table = harness.render_component_table(report)
    cell_table = harness.render_cell_table(report)

    if args.format == "json":
        doc = {
            "cells": [
                {"model": m, "component": c, "best_map50": v[0], "total_seconds": v[1]}
                for (m, c), v in report.cells.items()
            ],
            "model_averages": {
                m: {"map50": a, "total_seconds": s} for m, (a, s) in report.model_averages().items()
            },
            "component_averages": report.component_averages(),
        }
        print(json.dumps(doc, indent=2))
    else:
        print(model_table)
        print(component_table)
        print(cell_table, end="")
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.txt").write_text(model_table + "\n" + component_table + "\n" + cell_table)
        print(f"wrote {out / 'comparison.txt'}", file=sys.stderr)


_HANDLERS = {
    "split": _cmd_split,
    "preprocess": _cmd_preprocess,
    "augment": _cmd_augment,
    "evaluate": _cmd_evaluate,
    "train": _cmd_train,
    "fetch-tiles": _cmd_fetch_tiles,
    "census": _cmd_census,
    "report": _cmd_report,
}


if __name__ == "__main__":
    sys.exit(main())
