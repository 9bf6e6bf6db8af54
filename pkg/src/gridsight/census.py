"""Component census: run a detector per site, count detections, emit reports.

Detectors are pluggable: either a directory of precomputed prediction files
keyed by site id, or an external command that receives an image path and
writes a prediction file. Counting is per tile with no cross-tile
deduplication; per-site failures are logged and excluded, never fatal.
"""

from __future__ import annotations

import csv
import json
import logging
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AdapterFailed, DataError, MissingPrediction, UnknownSite
from .geotile import SitePoint
from .model import ComponentClass, Detection, read_prediction_file

logger = logging.getLogger(__name__)

DEFAULT_CONF_THRESH = 0.5


@dataclass
class SiteDetections:
    site_id: str
    detections: list[Detection]
    tile_px: int
    detector_name: str


class PrecomputedDetector:
    """Serves predictions from ``<root>/<site_id>.txt`` files."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.name = f"precomputed:{self.root}"

    def detect(self, site_id: str, image_path: Path | None, n_classes: int) -> list[Detection]:
        path = self.root / f"{site_id}.txt"
        if not path.exists():
            raise MissingPrediction(f"no prediction file for site {site_id!r} at {path}")
        return read_prediction_file(path, n_classes)


class CommandDetector:
    """Runs ``command`` per site with {image} and {output} placeholders; the
    command must write a prediction file to {output}.

    ``scratch_dir`` keeps the transient prediction files under the caller's
    output directory instead of the system temp dir.
    """

    def __init__(self, command_template: str, scratch_dir: str | Path | None = None):
        if "{image}" not in command_template or "{output}" not in command_template:
            raise DataError("detector command must contain {image} and {output} placeholders")
        self.command_template = command_template
        self.scratch_dir = Path(scratch_dir) if scratch_dir else None
        if self.scratch_dir:
            self.scratch_dir.mkdir(parents=True, exist_ok=True)
        self.name = f"command:{command_template}"

    def detect(self, site_id: str, image_path: Path | None, n_classes: int) -> list[Detection]:
        if image_path is None or not image_path.exists():
            raise AdapterFailed(f"no tile image for site {site_id!r}")
        with tempfile.TemporaryDirectory(prefix="gridsight-detect-", dir=self.scratch_dir) as tmp:
            out_path = Path(tmp) / f"{site_id}.txt"
            argv = [
                part.format(image=str(image_path), output=str(out_path))
                for part in shlex.split(self.command_template)
            ]
            proc = subprocess.run(argv, capture_output=True, text=True)
            if proc.returncode != 0:
                raise AdapterFailed(
                    f"detector exited {proc.returncode} for site {site_id!r}: {proc.stderr.strip()[:500]}"
                )
            if not out_path.exists():
                raise AdapterFailed(f"detector produced no prediction file for site {site_id!r}")
            return read_prediction_file(out_path, n_classes)


def detect(detector, site_id: str, image_path: Path | None, n_classes: int, tile_px: int = 0) -> SiteDetections:
    return SiteDetections(
        site_id=site_id,
        detections=detector.detect(site_id, image_path, n_classes),
        tile_px=tile_px,
        detector_name=detector.name,
    )


@dataclass
class ComponentCensus:
    counts: dict[str, int]  # class name -> national count
    per_site: dict[str, dict[str, int]]
    sites_processed: int
    sites_failed: int
    conf_thresh: float
    failed_site_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "conf_thresh": self.conf_thresh,
            "counts": self.counts,
            "per_site": self.per_site,
            "sites_processed": self.sites_processed,
            "sites_failed": self.sites_failed,
            "failed_site_ids": self.failed_site_ids,
        }


def count_components(
    all_sites: list[SiteDetections],
    classes: list[ComponentClass],
    conf_thresh: float = DEFAULT_CONF_THRESH,
    failed_site_ids: list[str] | None = None,
) -> ComponentCensus:
    """Count detections at or above the confidence threshold, per site and nationally."""
    if not 0.0 <= conf_thresh <= 1.0:
        raise DataError(f"conf_thresh {conf_thresh} outside [0, 1]")
    names = {c.id: c.name for c in classes}
    totals = {c.name: 0 for c in classes}
    per_site: dict[str, dict[str, int]] = {}
    for site in all_sites:
        site_counts = {c.name: 0 for c in classes}
        for det in site.detections:
            if det.confidence >= conf_thresh:
                site_counts[names[det.class_id]] += 1
        per_site[site.site_id] = site_counts
        for name, n in site_counts.items():
            totals[name] += n
    failed = list(failed_site_ids or [])
    return ComponentCensus(
        counts=totals,
        per_site=per_site,
        sites_processed=len(all_sites),
        sites_failed=len(failed),
        conf_thresh=conf_thresh,
        failed_site_ids=failed,
    )


def run_census(
    detector,
    site_ids: list[str],
    classes: list[ComponentClass],
    image_for_site=None,
    conf_thresh: float = DEFAULT_CONF_THRESH,
    jobs: int = 1,
) -> ComponentCensus:
    """Detect over every site, tolerating per-site failures."""

    def one(site_id: str):
        image = image_for_site(site_id) if image_for_site else None
        try:
            return detect(detector, site_id, image, len(classes)), None
        except Exception as e:  # per-site isolation: any failure skips the site
            return None, f"{site_id}: {e}"

    if jobs <= 1:
        results = [one(s) for s in site_ids]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, site_ids))

    detections: list[SiteDetections] = []
    failed: list[str] = []
    for site_id, (site, error) in zip(site_ids, results):
        if site is not None:
            detections.append(site)
        else:
            failed.append(site_id)
            logger.warning("census: %s", error)
    return count_components(detections, classes, conf_thresh, failed)


def _display_name(class_name: str) -> str:
    """``circuit_breaker`` -> ``Circuit Breakers``."""
    base = class_name.replace("_", " ").title()
    return base if base.endswith("s") else base + "s"


def render_summary(census: ComponentCensus) -> str:
    """Two-column component/count table, largest counts first."""
    rows = sorted(census.counts.items(), key=lambda kv: (-kv[1], kv[0]))
    display = [(_display_name(name), str(count)) for name, count in rows]
    name_width = max([len("Component")] + [len(d[0]) for d in display])
    lines = [
        "Component census",
        f"confidence threshold: {census.conf_thresh:g}",
        f"sites processed: {census.sites_processed} (failed: {census.sites_failed})",
        "",
        f"{'Component':<{name_width}}  # of Components",
    ]
    for name, count in display:
        lines.append(f"{name:<{name_width}}  {count}")
    return "\n".join(lines) + "\n"


def emit_reports(
    census: ComponentCensus,
    sites: list[SitePoint],
    out_dir: str | Path,
) -> dict[str, Path]:
    """Write the summary table, per-site CSV, and GeoJSON point collection."""
    by_id = {s.site_id: s for s in sites}
    unknown = [sid for sid in census.per_site if sid not in by_id]
    if unknown:
        raise UnknownSite(f"census references sites missing from the site list: {unknown[:5]}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    class_names = list(census.counts.keys())

    summary_path = out_dir / "summary.txt"
    summary_path.write_text(render_summary(census))

    csv_path = out_dir / "per_site.csv"
    with csv_path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["site_id", "lat", "lon"] + class_names)
        for site_id in sorted(census.per_site):
            site = by_id[site_id]
            counts = census.per_site[site_id]
            writer.writerow([site_id, site.lat, site.lon] + [counts[c] for c in class_names])

    geojson_path = out_dir / "sites.geojson"
    features = []
    for site_id in sorted(census.per_site):
        site = by_id[site_id]
        props = {"site_id": site_id}
        props.update(census.per_site[site_id])
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [site.lon, site.lat]},
                "properties": props,
            }
        )
    geojson_path.write_text(
        json.dumps({"type": "FeatureCollection", "features": features}, indent=2) + "\n"
    )

    json_path = out_dir / "census.json"
    json_path.write_text(json.dumps(census.to_dict(), indent=2) + "\n")

    return {"summary": summary_path, "per_site": csv_path, "geojson": geojson_path, "census": json_path}


def read_per_site_csv(path: str | Path) -> dict[str, dict[str, int]]:
    """Re-ingest the per-site CSV; inverse of the emit_reports CSV writer."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        class_cols = [c for c in reader.fieldnames or [] if c not in ("site_id", "lat", "lon")]
        out: dict[str, dict[str, int]] = {}
        for row in reader:
            out[row["site_id"]] = {c: int(row[c]) for c in class_cols}
    return out
