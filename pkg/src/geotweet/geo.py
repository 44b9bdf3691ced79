"""Geodesic math, country centroid/boundary tables and offline reverse geocoding.

Distances are great-circle distances on a sphere of radius 6371 km.
Country boundaries come from a GeoJSON FeatureCollection whose features
carry an ``iso2`` property; centroids come from a ``iso2,lat,lon`` CSV.

Reverse geocoding replaces an online service: a point is assigned to the
country whose polygon covers it (boundary inclusive); points slightly
offshore fall back to the country with the nearest boundary vertex within
``fallback_km``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import shapely
from shapely.geometry import Point, shape
from shapely.strtree import STRtree

from geotweet.errors import (
    ContractError,
    CountryTableError,
    EmptyCountryTable,
    UnknownCountry,
)

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
DEFAULT_FALLBACK_KM = 100.0
MAX_DISTANCE_KM = math.pi * EARTH_RADIUS_KM

_CODE_RE = re.compile(r"^[A-Za-z]{2}$")


# ---------------------------------------------------------------------------
# Points and distances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeoPoint:
    """A latitude/longitude pair in degrees."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise ContractError(f"GeoPoint out of range: lat={self.lat}, lon={self.lon}")


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points in kilometres.

    Symmetric, zero for identical points, at most ``pi * 6371``.
    """
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    h = min(1.0, max(0.0, h))
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


def haversine_km_array(
    lat1: np.ndarray | float,
    lon1: np.ndarray | float,
    lat2: np.ndarray | float,
    lon2: np.ndarray | float,
) -> np.ndarray:
    """Vectorized :func:`haversine_km` over broadcastable degree arrays."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = phi2 - phi1
    dlam = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


# ---------------------------------------------------------------------------
# Country table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BBox:
    """Axis-aligned lat/lon bounding box."""

    min_lat: float
    min_lon: float
    max_lat: float
    max_lon: float

    @property
    def area(self) -> float:
        return (self.max_lat - self.min_lat) * (self.max_lon - self.min_lon)

    def contains(self, lat: float, lon: float) -> bool:
        return self.min_lat <= lat <= self.max_lat and self.min_lon <= lon <= self.max_lon


@dataclass
class CountryEntry:
    """One country: centroid plus optional boundary rings.

    ``rings`` holds every closed ring (outer boundaries and holes) as an
    ``(m, 2)`` array of ``[lon, lat]``; ``geometry`` is the shapely polygon
    built from the same coordinates. Centroid-only entries have neither and
    are usable for distances but not for reverse geocoding.
    """

    code: str
    centroid: GeoPoint
    rings: list[np.ndarray] = field(default_factory=list)
    bbox: BBox | None = None
    geometry: Any = None

    @property
    def has_boundary(self) -> bool:
        return self.geometry is not None


class CountryTable:
    """Immutable mapping of ISO 3166-1 alpha-2 codes to country entries."""

    def __init__(self, entries: dict[str, CountryEntry]):
        self._entries = {code: entries[code] for code in sorted(entries)}
        self._bounded = [e for e in self._entries.values() if e.has_boundary]
        self._tree = STRtree([e.geometry for e in self._bounded]) if self._bounded else None

        # Flattened vertex arrays for the nearest-vertex fallback.
        if self._bounded:
            verts = [np.concatenate(e.rings) for e in self._bounded]
            self._vertex_owner = np.concatenate(
                [np.full(len(v), i, dtype=np.int64) for i, v in enumerate(verts)]
            )
            stacked = np.concatenate(verts)
            self._vertex_lon = stacked[:, 0]
            self._vertex_lat = stacked[:, 1]
        else:
            self._vertex_owner = np.empty(0, dtype=np.int64)
            self._vertex_lon = np.empty(0)
            self._vertex_lat = np.empty(0)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, code: object) -> bool:
        return code in self._entries

    @property
    def codes(self) -> list[str]:
        return list(self._entries)

    @property
    def has_boundaries(self) -> bool:
        return bool(self._bounded)

    def get(self, code: str) -> CountryEntry:
        try:
            return self._entries[code]
        except KeyError:
            raise UnknownCountry(code) from None

    def centroid(self, code: str) -> GeoPoint:
        return self.get(code).centroid

    def centroid_arrays(self, codes: list[str]) -> tuple[np.ndarray, np.ndarray]:
        """Latitude and longitude arrays of the centroids of *codes*."""
        lats = np.empty(len(codes))
        lons = np.empty(len(codes))
        cache: dict[str, GeoPoint] = {}
        for i, code in enumerate(codes):
            c = cache.get(code)
            if c is None:
                c = cache[code] = self.centroid(code)
            lats[i] = c.lat
            lons[i] = c.lon
        return lats, lons

    def containing(self, p: GeoPoint) -> list[str]:
        """Codes of all countries whose boundary covers *p* (edges inclusive)."""
        if self._tree is None:
            return []
        pt = Point(p.lon, p.lat)
        hits = []
        for i in self._tree.query(pt):
            entry = self._bounded[int(i)]
            if shapely.covers(entry.geometry, pt):
                hits.append(entry)
        hits.sort(key=lambda e: (e.bbox.area if e.bbox else 0.0, e.code))
        return [e.code for e in hits]

    def nearest_vertex(self, p: GeoPoint) -> tuple[str, float] | None:
        """Country owning the boundary vertex closest to *p*, and that distance."""
        if not self._bounded:
            return None
        d = haversine_km_array(p.lat, p.lon, self._vertex_lat, self._vertex_lon)
        best = np.full(len(self._bounded), np.inf)
        np.minimum.at(best, self._vertex_owner, d)
        order = sorted(range(len(best)), key=lambda i: (best[i], self._bounded[i].code))
        i = order[0]
        return self._bounded[i].code, float(best[i])


def country_distance_km(c1: str, c2: str, table: CountryTable) -> float:
    """Haversine distance between the centroids of two countries."""
    a = table.centroid(c1)
    b = table.centroid(c2)
    if c1 == c2:
        return 0.0
    return haversine_km(a, b)


def reverse_geocode(
    p: GeoPoint,
    table: CountryTable,
    fallback_km: float = DEFAULT_FALLBACK_KM,
) -> str | None:
    """Country code for a point, or ``None`` for Unknown.

    Containment wins (smallest bounding box on overlaps); otherwise the
    country with the nearest boundary vertex is returned when that vertex
    lies within *fallback_km*.

    Raises:
        EmptyCountryTable: If the table carries no boundaries.
    """
    if not table.has_boundaries:
        raise EmptyCountryTable()
    if fallback_km < 0:
        raise ContractError(f"fallback_km must be >= 0, got {fallback_km}")

    inside = table.containing(p)
    if inside:
        return inside[0]

    nearest = table.nearest_vertex(p)
    if nearest is not None and nearest[1] <= fallback_km:
        return nearest[0]
    return None


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _parse_code(raw: str, path: str, location: str) -> str:
    code = raw.strip()
    if not _CODE_RE.match(code):
        raise CountryTableError(path, location, f"invalid country code '{raw}'")
    return code.upper()


def _load_centroids(centroid_file: Path) -> dict[str, GeoPoint]:
    path = str(centroid_file)
    centroids: dict[str, GeoPoint] = {}
    with open(centroid_file, encoding="utf-8", newline="") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            location = f"row {row_no}"
            if len(row) != 3:
                raise CountryTableError(path, location, f"expected 3 columns, got {len(row)}")
            try:
                lat, lon = float(row[1]), float(row[2])
            except ValueError:
                if row_no == 1:
                    continue  # header
                raise CountryTableError(path, location, "latitude/longitude not numeric")
            code = _parse_code(row[0], path, location)
            if code in centroids:
                raise CountryTableError(path, location, f"duplicate code '{code}'")
            try:
                centroids[code] = GeoPoint(lat, lon)
            except ContractError as exc:
                raise CountryTableError(path, location, exc.detail) from exc
    return centroids


def _check_ring(ring: Any, path: str, location: str) -> np.ndarray:
    try:
        arr = np.asarray(ring, dtype=np.float64)
    except (TypeError, ValueError):
        raise CountryTableError(path, location, "ring coordinates are not numeric") from None
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise CountryTableError(path, location, "ring must be a list of [lon, lat] pairs")
    arr = arr[:, :2]
    if len(arr) < 4:
        raise CountryTableError(path, location, f"ring has {len(arr)} vertices, need >= 4")
    if not np.array_equal(arr[0], arr[-1]):
        raise CountryTableError(path, location, "ring is not closed (first != last vertex)")
    lon, lat = arr[:, 0], arr[:, 1]
    if np.any(np.abs(lat) > 90.0) or np.any(np.abs(lon) > 180.0):
        raise CountryTableError(path, location, "vertex out of lat/lon range")
    if np.any(np.abs(np.diff(lon)) > 180.0):
        raise CountryTableError(
            path, location, "ring crosses the antimeridian; split it in the data file"
        )
    return arr


def _load_boundaries(boundary_file: Path) -> dict[str, tuple[list[np.ndarray], Any]]:
    path = str(boundary_file)
    try:
        data = json.loads(Path(boundary_file).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CountryTableError(path, f"line {exc.lineno}", f"invalid JSON: {exc.msg}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("features"), list):
        raise CountryTableError(path, "top level", "expected a GeoJSON FeatureCollection")

    boundaries: dict[str, tuple[list[np.ndarray], Any]] = {}
    for i, feature in enumerate(data["features"]):
        location = f"feature {i}"
        if not isinstance(feature, dict):
            raise CountryTableError(path, location, "feature is not a JSON object")
        props = feature.get("properties") or {}
        if not isinstance(props, dict) or "iso2" not in props:
            raise CountryTableError(path, location, "missing 'iso2' property")
        code = _parse_code(str(props["iso2"]), path, location)
        if code in boundaries:
            raise CountryTableError(path, location, f"duplicate code '{code}'")
        geom = feature.get("geometry")
        if not isinstance(geom, dict):
            raise CountryTableError(path, location, "geometry is not a JSON object")
        gtype = geom.get("type")
        coords = geom.get("coordinates")
        if gtype == "Polygon":
            polygons = [coords]
        elif gtype == "MultiPolygon":
            polygons = coords
        else:
            raise CountryTableError(path, location, f"unsupported geometry type '{gtype}'")
        if not isinstance(polygons, list) or not all(isinstance(p, list) for p in polygons):
            raise CountryTableError(path, location, f"{gtype} coordinates must be nested lists")
        rings = [
            _check_ring(ring, path, f"{location} ring {j}.{k}")
            for j, polygon in enumerate(polygons)
            for k, ring in enumerate(polygon)
        ]
        if not rings:
            raise CountryTableError(path, location, "geometry has no rings")
        try:
            geometry = shape(geom)
        except (shapely.errors.ShapelyError, ValueError, TypeError, IndexError) as exc:
            raise CountryTableError(path, location, f"invalid geometry: {exc}") from exc
        boundaries[code] = (rings, geometry)
    return boundaries


def load_country_table(centroid_file: Path, boundary_file: Path | None = None) -> CountryTable:
    """Load centroids (CSV) and optional boundaries (GeoJSON) into a table.

    Countries present only in the centroid file become centroid-only
    entries. Countries present only in the boundary file get the polygon
    centroid and a warning.

    Raises:
        CountryTableError: On malformed rows/features or duplicate codes.
    """
    centroids = _load_centroids(Path(centroid_file))
    boundaries = _load_boundaries(Path(boundary_file)) if boundary_file else {}

    entries: dict[str, CountryEntry] = {}
    for code in sorted(set(centroids) | set(boundaries)):
        rings, geometry = boundaries.get(code, ([], None))
        centroid = centroids.get(code)
        if centroid is None:
            c = geometry.centroid
            centroid = GeoPoint(c.y, c.x)
            logger.warning(
                "Country %s has a boundary but no centroid row; using polygon centroid", code
            )
        bbox = None
        if rings:
            stacked = np.concatenate(rings)
            bbox = BBox(
                min_lat=float(stacked[:, 1].min()),
                min_lon=float(stacked[:, 0].min()),
                max_lat=float(stacked[:, 1].max()),
                max_lon=float(stacked[:, 0].max()),
            )
        entries[code] = CountryEntry(
            code=code, centroid=centroid, rings=rings, bbox=bbox, geometry=geometry
        )

    logger.info(
        "Loaded %d countries (%d with boundaries)",
        len(entries),
        sum(1 for e in entries.values() if e.has_boundary),
    )
    return CountryTable(entries)
