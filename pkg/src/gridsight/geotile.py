"""Site coordinates to imagery tiles: bounds math, providers, fallback, cache.

A site's square footprint is computed on a local tangent plane using
111,320 m per degree of latitude and a cos(lat) correction for longitude.
Tile requests walk a strictly decreasing list of pixel sizes until the
provider accepts one; only a size-limit rejection triggers the fallback.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import (
    AllCandidatesFailed,
    BadSide,
    DataError,
    DecodeError,
    EmptyFile,
    MissingColumn,
    PolarLatitude,
    ProviderError,
    TooLarge,
)

logger = logging.getLogger(__name__)

METERS_PER_DEGREE = 111320.0
DEFAULT_SIDE_M = 150.0
DEFAULT_CANDIDATES = (4096, 3072, 2048)
POLAR_LATITUDE_LIMIT = 85.0


@dataclass(frozen=True)
class SitePoint:
    site_id: str
    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class GeoBounds:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError("degenerate bounds")
        if max(abs(self.lat_min), abs(self.lat_max)) > 90.0:
            raise ValueError("latitude outside [-90, 90]")


@dataclass
class TileAsset:
    site_id: str
    bounds: GeoBounds
    px: int
    image: np.ndarray
    payload: bytes  # raw provider response, cached byte-for-byte
    ground_resolution: float  # meters per pixel
    fetched_at: str
    provider_name: str


@dataclass(frozen=True)
class SiteRowError:
    row: int
    message: str


@dataclass
class SiteLoadResult:
    sites: list[SitePoint]
    errors: list[SiteRowError]


def load_sites(
    path: str | Path,
    id_column: str = "site_id",
    lat_column: str = "lat",
    lon_column: str = "lon",
) -> SiteLoadResult:
    """Read site coordinates from a CSV; bad rows go to the error report."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise EmptyFile(f"{path}: no header row")
        missing = [c for c in (id_column, lat_column, lon_column) if c not in reader.fieldnames]
        if missing:
            raise MissingColumn(f"{path}: missing columns {missing} (found {reader.fieldnames})")

        sites: list[SitePoint] = []
        errors: list[SiteRowError] = []
        first_row: dict[str, int] = {}
        for row_no, row in enumerate(reader, start=2):  # header is line 1
            site_id = (row.get(id_column) or "").strip()
            if not site_id:
                errors.append(SiteRowError(row_no, "empty site id"))
                continue
            try:
                lat = float(row[lat_column])
                lon = float(row[lon_column])
            except (TypeError, ValueError):
                errors.append(SiteRowError(row_no, f"non-numeric coordinates for {site_id!r}"))
                continue
            if site_id in first_row:
                errors.append(
                    SiteRowError(
                        row_no,
                        f"duplicate site_id {site_id!r} (rows {first_row[site_id]} and {row_no})",
                    )
                )
                continue
            try:
                point = SitePoint(site_id=site_id, lat=lat, lon=lon)
            except ValueError as e:
                errors.append(SiteRowError(row_no, str(e)))
                continue
            first_row[site_id] = row_no
            sites.append(point)

    if not sites and not errors:
        raise EmptyFile(f"{path}: no data rows")
    return SiteLoadResult(sites=sites, errors=errors)


def square_bounds(point: SitePoint, side_m: float = DEFAULT_SIDE_M) -> GeoBounds:
    """Geographic bounds of a side_m x side_m square centered on the point."""
    if side_m <= 0:
        raise BadSide(f"side must be positive, got {side_m}")
    if abs(point.lat) >= POLAR_LATITUDE_LIMIT:
        raise PolarLatitude(f"latitude {point.lat} too close to a pole for the tangent-plane approximation")
    half = side_m / 2.0
    dlat = half / METERS_PER_DEGREE
    dlon = half / (METERS_PER_DEGREE * math.cos(math.radians(point.lat)))
    return GeoBounds(
        lat_min=point.lat - dlat,
        lat_max=point.lat + dlat,
        lon_min=point.lon - dlon,
        lon_max=point.lon + dlon,
    )


def bounds_side_meters(bounds: GeoBounds) -> float:
    """North-south extent in meters under the same constant used to build it."""
    return (bounds.lat_max - bounds.lat_min) * METERS_PER_DEGREE


class TileProvider(Protocol):
    name: str

    def fetch(self, bounds: GeoBounds, px: int, site_id: str = "") -> bytes:
        """Return encoded image bytes; raise TooLarge to trigger fallback,
        any other ProviderError to abort."""
        ...


class HttpTileProvider:
    """Generic HTTP bounds-request provider driven by a URL template.

    The template may use ``{lat_min} {lat_max} {lon_min} {lon_max} {px}``
    placeholders. An optional bearer token is sent as an Authorization
    header. HTTP 413 is treated as a size-limit rejection.
    """

    def __init__(
        self,
        url_template: str,
        token: str | None = None,
        timeout: float = 60.0,
        too_large_statuses: tuple[int, ...] = (413,),
    ):
        if "{px}" not in url_template:
            raise ValueError("url template must contain a {px} placeholder")
        self.url_template = url_template
        self.token = token
        self.timeout = timeout
        self.too_large_statuses = too_large_statuses
        self.name = url_template

    def fetch(self, bounds: GeoBounds, px: int, site_id: str = "") -> bytes:
        import requests

        url = self.url_template.format(
            lat_min=bounds.lat_min,
            lat_max=bounds.lat_max,
            lon_min=bounds.lon_min,
            lon_max=bounds.lon_max,
            px=px,
            site_id=site_id,
        )
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        try:
            response = requests.get(url, headers=headers, timeout=self.timeout)
        except requests.RequestException as e:
            raise ProviderError(f"request failed: {e}") from e
        if response.status_code in self.too_large_statuses:
            raise TooLarge(f"provider rejected {px} px (HTTP {response.status_code})")
        if response.status_code != 200:
            raise ProviderError(f"HTTP {response.status_code} for {url}")
        return response.content


class DirectoryTileProvider:
    """Offline provider serving files from a directory; used by tests and
    air-gapped runs.

    Serves ``<root>/<site_id>.<ext>`` when a site id accompanies the request,
    falling back to ``<root>/tile.<ext>``; requests above ``max_px`` are
    rejected as size-limited.
    """

    name = "stub"

    def __init__(self, root: str | Path, max_px: int | None = None):
        self.root = Path(root)
        self.max_px = max_px

    def fetch(self, bounds: GeoBounds, px: int, site_id: str = "") -> bytes:
        if self.max_px is not None and px > self.max_px:
            raise TooLarge(f"stub provider limit is {self.max_px} px, requested {px}")
        names = []
        if site_id:
            names.extend(f"{site_id}{ext}" for ext in (".png", ".jpg", ".img"))
        names.extend(f"tile{ext}" for ext in (".png", ".jpg", ".img"))
        for name in names:
            path = self.root / name
            if path.exists():
                return path.read_bytes()
        raise ProviderError(f"no tile file for {site_id!r} under {self.root}")


def fetch_tile(
    provider: TileProvider,
    bounds: GeoBounds,
    candidates: tuple[int, ...] = DEFAULT_CANDIDATES,
    site_id: str = "",
) -> TileAsset:
    """Try each pixel size in order until the provider accepts one."""
    candidates = tuple(candidates)
    if not candidates:
        raise DataError("candidate list must be nonempty")
    if any(b >= a for a, b in zip(candidates, candidates[1:])):
        raise DataError(f"candidates must be strictly decreasing, got {candidates}")

    causes: list[str] = []
    for px in candidates:
        try:
            payload = provider.fetch(bounds, px, site_id)
        except TooLarge as e:
            causes.append(f"{px} px: {e}")
            continue
        return _decode_asset(payload, bounds, px, site_id, provider.name)
    raise AllCandidatesFailed(
        f"all {len(candidates)} candidate sizes rejected for {site_id or bounds}", causes
    )


def _decode_asset(payload: bytes, bounds: GeoBounds, px: int, site_id: str, provider_name: str) -> TileAsset:
    from . import images

    try:
        raster = images.decode_image(payload)
    except Exception as e:
        raise DecodeError(f"provider returned undecodable bytes for {site_id or bounds}: {e}") from e
    side = bounds_side_meters(bounds)
    return TileAsset(
        site_id=site_id,
        bounds=bounds,
        px=px,
        image=raster,
        payload=payload,
        ground_resolution=side / px,
        fetched_at=datetime.now(timezone.utc).isoformat(),
        provider_name=provider_name,
    )


class TileStore:
    """On-disk cache: ``<root>/<site_id>/<key>.img`` plus a JSON sidecar."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def lock_for(self, key: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(key, threading.Lock())

    @staticmethod
    def cache_key(site_id: str, side_m: float, candidates: tuple[int, ...], provider_name: str) -> str:
        material = f"{site_id}|{side_m!r}|{','.join(map(str, candidates))}|{provider_name}"
        return hashlib.sha256(material.encode()).hexdigest()[:16]

    def _paths(self, site_id: str, key: str) -> tuple[Path, Path]:
        d = self.root / site_id
        return d / f"{key}.img", d / f"{key}.json"

    def get(self, site_id: str, key: str) -> TileAsset | None:
        img_path, meta_path = self._paths(site_id, key)
        if not img_path.exists() or not meta_path.exists():
            return None
        meta = json.loads(meta_path.read_text())
        payload = img_path.read_bytes()
        if hashlib.sha256(payload).hexdigest() != meta["checksum"]:
            logger.warning("cache entry for %s is corrupt; refetching", site_id)
            return None
        b = meta["bounds"]
        return _rebuild_asset(payload, meta, GeoBounds(b["lat_min"], b["lat_max"], b["lon_min"], b["lon_max"]))

    def put(self, asset: TileAsset, key: str) -> None:
        img_path, meta_path = self._paths(asset.site_id, key)
        img_path.parent.mkdir(parents=True, exist_ok=True)
        img_path.write_bytes(asset.payload)
        meta = {
            "site_id": asset.site_id,
            "bounds": {
                "lat_min": asset.bounds.lat_min,
                "lat_max": asset.bounds.lat_max,
                "lon_min": asset.bounds.lon_min,
                "lon_max": asset.bounds.lon_max,
            },
            "px": asset.px,
            "ground_resolution": asset.ground_resolution,
            "fetched_at": asset.fetched_at,
            "provider": asset.provider_name,
            "checksum": hashlib.sha256(asset.payload).hexdigest(),
        }
        meta_path.write_text(json.dumps(meta, indent=2) + "\n")


def _rebuild_asset(payload: bytes, meta: dict, bounds: GeoBounds) -> TileAsset:
    from . import images

    return TileAsset(
        site_id=meta["site_id"],
        bounds=bounds,
        px=meta["px"],
        image=images.decode_image(payload),
        payload=payload,
        ground_resolution=meta["ground_resolution"],
        fetched_at=meta["fetched_at"],
        provider_name=meta["provider"],
    )


def cache_get_or_fetch(
    store: TileStore,
    site: SitePoint,
    provider: TileProvider,
    side_m: float = DEFAULT_SIDE_M,
    candidates: tuple[int, ...] = DEFAULT_CANDIDATES,
) -> TileAsset:
    """Serve from cache when present and intact, otherwise fetch and persist."""
    key = TileStore.cache_key(site.site_id, side_m, tuple(candidates), provider.name)
    with store.lock_for(f"{site.site_id}/{key}"):
        cached = store.get(site.site_id, key)
        if cached is not None:
            return cached
        asset = fetch_tile(provider, square_bounds(site, side_m), tuple(candidates), site.site_id)
        store.put(asset, key)
        return asset


@dataclass
class FetchReport:
    fetched: list[str]
    failed: dict[str, str]  # site_id -> reason


def fetch_sites(
    sites: list[SitePoint],
    store: TileStore,
    provider: TileProvider,
    side_m: float = DEFAULT_SIDE_M,
    candidates: tuple[int, ...] = DEFAULT_CANDIDATES,
    jobs: int = 1,
) -> FetchReport:
    """Fetch every site with a bounded number of in-flight requests."""
    report = FetchReport(fetched=[], failed={})

    def one(site: SitePoint) -> tuple[str, str | None]:
        try:
            cache_get_or_fetch(store, site, provider, side_m, candidates)
            return site.site_id, None
        except (ProviderError, PolarLatitude) as e:
            return site.site_id, str(e)

    if jobs <= 1:
        results = [one(s) for s in sites]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, sites))
    for site_id, error in results:
        if error is None:
            report.fetched.append(site_id)
        else:
            report.failed[site_id] = error
            logger.warning("site %s failed: %s", site_id, error)
    return report
