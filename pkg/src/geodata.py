"""
Geodata for the Road-Mask Tree Mapping Toolkit

Parses road and crown geometry from GeoJSON and the Overpass API, and
projects WGS84 coordinates into the local metric plane used by rasters.
"""

import json
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import requests

from config.overpass_config import get_overpass_endpoint, get_overpass_session
from config.settings import get_geodata_config
from src.exceptions import (
    FormatError,
    NetworkError,
    NetworkTimeoutError,
    RateLimitError,
    ValidationError,
)

logger = logging.getLogger(__name__)

EARTH_RADIUS = 6378137.0
HIGHWAY_CLASS_PATTERN = re.compile(r'^[a-z_]+$')


@dataclass(frozen=True)
class Point2:
    """Planar point in meters (easting, northing)"""
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValidationError(f"Point coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class Polyline:
    """Ordered vertices of a road centerline"""
    vertices: Tuple[Point2, ...]

    def __post_init__(self):
        if len(self.vertices) < 2:
            raise ValidationError(f"Polyline needs at least 2 vertices, got {len(self.vertices)}")
        if not any(a != b for a, b in zip(self.vertices, self.vertices[1:])):
            raise ValidationError("Polyline has no segment of positive length")

    def segments(self) -> Iterable[Tuple[Point2, Point2]]:
        return zip(self.vertices, self.vertices[1:])


def _validate_ring(ring: Sequence[Point2], role: str) -> None:
    if len(set(ring)) < 3:
        raise ValidationError(f"Polygon {role} ring needs at least 3 distinct vertices")


@dataclass(frozen=True)
class Polygon:
    """Polygon with implicitly closed rings; holes subtract by even-odd parity"""
    outer: Tuple[Point2, ...]
    holes: Tuple[Tuple[Point2, ...], ...] = ()

    def __post_init__(self):
        _validate_ring(self.outer, 'outer')
        for hole in self.holes:
            _validate_ring(hole, 'hole')

    @property
    def rings(self) -> Tuple[Tuple[Point2, ...], ...]:
        return (self.outer,) + tuple(self.holes)


@dataclass
class FeatureSet:
    """Parsed vector geometry in local metric coordinates"""
    polylines: List[Polyline] = field(default_factory=list)
    polygons: List[Polygon] = field(default_factory=list)
    skipped: int = 0

    def extend(self, other: 'FeatureSet') -> None:
        self.polylines.extend(other.polylines)
        self.polygons.extend(other.polygons)
        self.skipped += other.skipped


@dataclass(frozen=True)
class GeoBBox:
    """WGS84 bounding box in decimal degrees"""
    south: float
    west: float
    north: float
    east: float

    def __post_init__(self):
        if not (-90.0 <= self.south < self.north <= 90.0):
            raise ValidationError(f"Invalid latitude range: south={self.south}, north={self.north}")
        if not (-180.0 <= self.west < self.east <= 180.0):
            raise ValidationError(f"Invalid longitude range: west={self.west}, east={self.east}")

    @classmethod
    def parse(cls, text: str) -> 'GeoBBox':
        """Parse ``S,W,N,E``"""
        values = _parse_floats(text, 4, 'bbox')
        return cls(*values)

    def center(self) -> Tuple[float, float]:
        """Center as (lon, lat)"""
        return ((self.west + self.east) / 2.0, (self.south + self.north) / 2.0)


@dataclass(frozen=True)
class LocalProjection:
    """Equirectangular projection around (lon0, lat0)"""
    lon0: float
    lat0: float

    def __post_init__(self):
        if not (-180.0 <= self.lon0 <= 180.0):
            raise ValidationError(f"Projection origin longitude out of range: {self.lon0}")
        if not (-90.0 < self.lat0 < 90.0):
            raise ValidationError(f"Projection origin latitude must satisfy |lat0| < 90: {self.lat0}")

    @classmethod
    def parse(cls, text: str) -> 'LocalProjection':
        """Parse ``lon0,lat0``"""
        lon0, lat0 = _parse_floats(text, 2, 'projection origin')
        return cls(lon0, lat0)


def _parse_floats(text: str, count: int, what: str) -> List[float]:
    parts = [p.strip() for p in text.split(',')]
    if len(parts) != count:
        raise ValidationError(f"Expected {count} comma-separated values for {what}, got {text!r}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ValidationError(f"Non-numeric value in {what}: {text!r}")


def project_wgs84_local(lon: float, lat: float, proj: LocalProjection) -> Point2:
    """
    Project WGS84 degrees into the local plane

    Args:
        lon: Longitude in degrees
        lat: Latitude in degrees
        proj: Projection origin

    Returns:
        Point in meters relative to the origin
    """
    x = EARTH_RADIUS * math.cos(proj.lat0 * math.pi / 180.0) * (lon - proj.lon0) * math.pi / 180.0
    y = EARTH_RADIUS * (lat - proj.lat0) * math.pi / 180.0
    return Point2(x, y)


def unproject_local_wgs84(point: Point2, proj: LocalProjection) -> Tuple[float, float]:
    """Inverse of project_wgs84_local, returns (lon, lat)"""
    lon = point.x * 180.0 / math.pi / (EARTH_RADIUS * math.cos(proj.lat0 * math.pi / 180.0)) + proj.lon0
    lat = point.y * 180.0 / math.pi / EARTH_RADIUS + proj.lat0
    return lon, lat


# GeoJSON

def _points(coords: Any, index: int) -> Tuple[Point2, ...]:
    try:
        return tuple(Point2(float(c[0]), float(c[1])) for c in coords)
    except (TypeError, IndexError, ValueError) as e:
        raise ValidationError(f"Feature {index}: bad coordinate array ({e})")


def _ring(coords: Any, index: int) -> Tuple[Point2, ...]:
    ring = _points(coords, index)
    if len(ring) > 1 and ring[0] == ring[-1]:
        ring = ring[:-1]
    return ring


def _polygon(rings: Any, index: int) -> Polygon:
    if not isinstance(rings, list) or not rings:
        raise ValidationError(f"Feature {index}: polygon without rings")
    outer, holes = _ring(rings[0], index), tuple(_ring(r, index) for r in rings[1:])
    try:
        return Polygon(outer, holes)
    except ValidationError as e:
        raise ValidationError(f"Feature {index}: {e}")


def _polyline(coords: Any, index: int) -> Polyline:
    points = _points(coords, index)
    try:
        return Polyline(points)
    except ValidationError as e:
        raise ValidationError(f"Feature {index}: {e}")


def _collect_geometries(doc: Any) -> List[Optional[Dict[str, Any]]]:
    """Unwrap Feature/FeatureCollection into bare geometry objects"""
    if not isinstance(doc, dict):
        raise FormatError("GeoJSON root must be an object")
    kind = doc.get('type')
    if kind == 'FeatureCollection':
        geometries = []
        for feature in doc.get('features') or []:
            geometries.extend(_collect_geometries(feature))
        return geometries
    if kind == 'Feature':
        return [doc.get('geometry')]
    return [doc]


def parse_geojson(text: str) -> FeatureSet:
    """
    Parse GeoJSON geometry, taking coordinates verbatim as planar (x, y)

    Args:
        text: GeoJSON document

    Returns:
        FeatureSet with polylines, polygons and the count of skipped geometries
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[:e.pos].encode('utf-8'))
        raise FormatError(f"Malformed GeoJSON: {e.msg}", offset=offset)

    features = FeatureSet()
    for index, geometry in enumerate(_collect_geometries(doc)):
        kind = geometry.get('type') if isinstance(geometry, dict) else None
        coords = geometry.get('coordinates') if isinstance(geometry, dict) else None
        if kind == 'LineString':
            features.polylines.append(_polyline(coords, index))
        elif kind == 'MultiLineString':
            features.polylines.extend(_polyline(part, index) for part in coords or [])
        elif kind == 'Polygon':
            features.polygons.append(_polygon(coords, index))
        elif kind == 'MultiPolygon':
            features.polygons.extend(_polygon(part, index) for part in coords or [])
        else:
            features.skipped += 1

    if features.skipped:
        logger.warning(f"Skipped {features.skipped} unsupported GeoJSON geometries")
    logger.info(f"Parsed {len(features.polylines)} polylines and {len(features.polygons)} polygons")
    return features


def dump_geojson(features: FeatureSet) -> str:
    """Serialise a FeatureSet as a FeatureCollection (deterministic output)"""
    items = []
    for line in features.polylines:
        items.append({
            'type': 'Feature',
            'properties': {},
            'geometry': {'type': 'LineString', 'coordinates': [[p.x, p.y] for p in line.vertices]}
        })
    for poly in features.polygons:
        rings = [[[p.x, p.y] for p in ring + ring[:1]] for ring in poly.rings]
        items.append({
            'type': 'Feature',
            'properties': {},
            'geometry': {'type': 'Polygon', 'coordinates': rings}
        })
    return json.dumps({'type': 'FeatureCollection', 'features': items})


# Overpass

def with_link_variants(classes: Sequence[str]) -> List[str]:
    """Append ``<class>_link`` for classes that have link roads"""
    linkable = set(get_geodata_config()['link_classes'])
    extra = [f"{c}_link" for c in classes if c in linkable and f"{c}_link" not in classes]
    return list(classes) + extra


def build_overpass_query(bbox: GeoBBox, classes: Optional[Sequence[str]] = None) -> str:
    """
    Build the Overpass QL query selecting highway ways inside a bbox

    Args:
        bbox: Fetch extent
        classes: Highway classes; defaults to the main drivable roads

    Returns:
        Query string
    """
    if classes is None:
        classes = get_geodata_config()['highway_classes']
    if not classes:
        raise ValidationError("At least one highway class is required")
    for c in classes:
        if not isinstance(c, str) or not HIGHWAY_CLASS_PATTERN.match(c):
            raise ValidationError(f"Invalid highway class: {c!r}")
    alternation = '|'.join(classes)
    extent = ','.join(f"{v:.7f}" for v in (bbox.south, bbox.west, bbox.north, bbox.east))
    return f'[out:json][timeout:60];way["highway"~"^({alternation})$"]({extent});out geom;'


def _retry_after(value: Optional[str]) -> Optional[float]:
    if value is None:
        return None
    try:
        return float(value)
    except ValueError:
        return None


class OverpassClient:
    """Client for fetching road ways from an Overpass interpreter"""

    def __init__(self, endpoint: Optional[str] = None, timeout: Optional[float] = None,
                 session: Optional[requests.Session] = None):
        self.endpoint = endpoint or get_overpass_endpoint()
        self.timeout = timeout if timeout is not None else get_geodata_config()['overpass_timeout']
        self.session = session or get_overpass_session()

    def fetch_roads(self, bbox: GeoBBox, classes: Optional[Sequence[str]] = None) -> bytes:
        """
        POST the road query and return the raw response body

        Args:
            bbox: Fetch extent
            classes: Highway classes

        Returns:
            Response bytes on HTTP 200
        """
        if not re.match(r'^https?://', self.endpoint):
            raise ValidationError(f"Endpoint must be an HTTP(S) URL: {self.endpoint}")
        query = build_overpass_query(bbox, classes)
        logger.info(f"Querying Overpass at {self.endpoint}")
        try:
            response = self.session.post(self.endpoint, data={'data': query}, timeout=self.timeout)
        except requests.Timeout:
            raise NetworkTimeoutError(f"Overpass request timed out after {self.timeout:g} s")
        except requests.RequestException as e:
            raise NetworkError(f"Overpass request failed: {e}")

        if response.status_code == 429:
            retry_after = _retry_after(response.headers.get('Retry-After'))
            logger.warning("Overpass rate limit reached")
            raise RateLimitError("Overpass rate limit exceeded", retry_after=retry_after)
        if response.status_code != 200:
            raise NetworkError(f"Overpass returned HTTP {response.status_code}", status=response.status_code)
        logger.info(f"Received {len(response.content)} bytes from Overpass")
        return response.content


def fetch_roads(endpoint: str, bbox: GeoBBox, classes: Optional[Sequence[str]] = None,
                timeout: Optional[float] = None) -> bytes:
    """Fetch raw Overpass response bytes for the roads in ``bbox``"""
    return OverpassClient(endpoint, timeout).fetch_roads(bbox, classes)


def parse_overpass_response(payload: bytes, proj: LocalProjection) -> FeatureSet:
    """
    Convert ``out geom`` ways into projected polylines

    Args:
        payload: Overpass JSON response body
        proj: Local projection for the (lat, lon) geometry

    Returns:
        FeatureSet of polylines in element order
    """
    try:
        doc = json.loads(payload.decode('utf-8'))
    except UnicodeDecodeError as e:
        raise FormatError("Overpass response is not UTF-8", offset=e.start)
    except json.JSONDecodeError as e:
        raise FormatError(f"Malformed Overpass JSON: {e.msg}", offset=len(e.doc[:e.pos].encode('utf-8')))
    if not isinstance(doc, dict) or not isinstance(doc.get('elements', []), list):
        raise FormatError("Overpass response has no elements array")

    features = FeatureSet()
    for element in doc.get('elements', []):
        if not isinstance(element, dict) or element.get('type') != 'way':
            continue
        element_id = element.get('id')
        geometry = element.get('geometry')
        if not isinstance(geometry, list):
            raise FormatError(f"Way {element_id} has no geometry (query must use 'out geom')")
        try:
            vertices = tuple(project_wgs84_local(float(n['lon']), float(n['lat']), proj) for n in geometry)
            features.polylines.append(Polyline(vertices))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ValidationError):
                raise ValidationError(f"Way {element_id}: {e}")
            raise FormatError(f"Way {element_id} has malformed geometry: {e}")
    logger.info(f"Parsed {len(features.polylines)} road ways from Overpass response")
    return features
