"""
Mask Generation for the Road-Mask Tree Mapping Toolkit

Burns the road validity mask (buffered centerlines) and the crown label
raster (polygons) onto a pixel grid. Pixel membership is decided by the
pixel center. The brute-force oracles below define correctness: the fast
rasterizers must agree with them bit for bit.
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from config.settings import MASK_CONFIG
from src.exceptions import ValidationError
from src.geodata import Point2, Polygon, Polyline
from src.raster import GridTransform, Raster, pixel_center, require_binary, require_same_grid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BufferSpec:
    """Buffer radius around road centerlines, in meters"""
    radius: float = MASK_CONFIG['buffer_radius']

    def __post_init__(self):
        if not (math.isfinite(self.radius) and self.radius >= 0):
            raise ValidationError(f"Buffer radius must be >= 0, got {self.radius}")


def point_segment_distance(p: Point2, a: Point2, b: Point2) -> float:
    """
    Euclidean distance from ``p`` to the closed segment ``ab``

    Args:
        p: Query point
        a: Segment start
        b: Segment end (may equal ``a``)

    Returns:
        Distance in meters
    """
    dx = b.x - a.x
    dy = b.y - a.y
    length2 = dx * dx + dy * dy
    if length2 == 0.0:
        ex = p.x - a.x
        ey = p.y - a.y
        return math.sqrt(ex * ex + ey * ey)
    t = ((p.x - a.x) * dx + (p.y - a.y) * dy) / length2
    t = max(0.0, min(1.0, t))
    ex = p.x - (a.x + t * dx)
    ey = p.y - (a.y + t * dy)
    return math.sqrt(ex * ex + ey * ey)


def segment_distances(xs: np.ndarray, ys: np.ndarray, a: Point2, b: Point2) -> np.ndarray:
    """Vectorised point_segment_distance over a (rows, cols) block of centers"""
    dx = b.x - a.x
    dy = b.y - a.y
    length2 = dx * dx + dy * dy
    px = xs[np.newaxis, :]
    py = ys[:, np.newaxis]
    if length2 == 0.0:
        ex = px - a.x
        ey = py - a.y
        return np.sqrt(ex * ex + ey * ey)
    t = ((px - a.x) * dx + (py - a.y) * dy) / length2
    t = np.clip(t, 0.0, 1.0)
    ex = px - (a.x + t * dx)
    ey = py - (a.y + t * dy)
    return np.sqrt(ex * ex + ey * ey)


def _index_range(low: float, high: float, start: float, step: float, count: int, descending: bool):
    """Conservative index window of pixel centers within [low, high]"""
    if descending:
        first = math.floor((start - high) / step) - 1
        last = math.floor((start - low) / step) + 1
    else:
        first = math.floor((low - start) / step) - 1
        last = math.floor((high - start) / step) + 1
    return max(first, 0), min(last + 1, count)


def rasterize_buffered_polylines(lines: Sequence[Polyline], grid: GridTransform,
                                 spec: BufferSpec = BufferSpec()) -> Raster:
    """
    Binary mask of pixels whose center lies within ``spec.radius`` of any segment

    Each segment is evaluated only inside its bounding box grown by the
    radius plus one pixel, which cannot change the result.

    Args:
        lines: Road centerlines
        grid: Target grid
        spec: Buffer radius

    Returns:
        Single-band u8 raster with values in {0, 1}
    """
    mask = np.zeros((grid.height, grid.width), dtype=bool)
    xs, ys = grid.pixel_centers()
    margin = spec.radius + grid.pixel_size
    for line in lines:
        for a, b in line.segments():
            c0, c1 = _index_range(min(a.x, b.x) - margin, max(a.x, b.x) + margin,
                                  grid.origin_x, grid.pixel_size, grid.width, descending=False)
            r0, r1 = _index_range(min(a.y, b.y) - margin, max(a.y, b.y) + margin,
                                  grid.origin_y, grid.pixel_size, grid.height, descending=True)
            if c0 >= c1 or r0 >= r1:
                continue
            near = segment_distances(xs[c0:c1], ys[r0:r1], a, b) <= spec.radius
            mask[r0:r1, c0:c1] |= near

    raster = Raster(grid, mask.astype(np.uint8)[np.newaxis])
    logger.info(f"Road mask covers {mask.mean():.2%} of {grid.width}x{grid.height} grid "
                f"({len(lines)} polylines, radius {spec.radius:g} m)")
    return raster


def buffer_mask_oracle(lines: Sequence[Polyline], grid: GridTransform,
                       spec: BufferSpec = BufferSpec()) -> Raster:
    """Per-pixel brute force over every segment"""
    data = np.zeros((1, grid.height, grid.width), dtype=np.uint8)
    segments = [seg for line in lines for seg in line.segments()]
    for row in range(grid.height):
        for col in range(grid.width):
            center = pixel_center(grid, row, col)
            if any(point_segment_distance(center, a, b) <= spec.radius for a, b in segments):
                data[0, row, col] = 1
    return Raster(grid, data)


def _edge_arrays(polygon: Polygon):
    """Edge endpoint arrays over all rings (implicitly closed)"""
    x1, y1, x2, y2 = [], [], [], []
    for ring in polygon.rings:
        for i, p in enumerate(ring):
            q = ring[(i + 1) % len(ring)]
            x1.append(p.x)
            y1.append(p.y)
            x2.append(q.x)
            y2.append(q.y)
    return np.array(x1), np.array(y1), np.array(x2), np.array(y2)


def _validate_polygons(polys: Sequence[Polygon]) -> None:
    for index, poly in enumerate(polys):
        for ring in poly.rings:
            if len(set(ring)) < 3:
                raise ValidationError(f"Polygon {index} has a degenerate ring")


def rasterize_polygons(polys: Sequence[Polygon], grid: GridTransform) -> Raster:
    """
    Binary raster of pixel centers inside any polygon (even-odd rule)

    An edge crosses the rightward ray from center (xc, yc) when
    y1 <= yc < y2 or y2 <= yc < y1 and its x-intersection is strictly
    greater than xc. Holes subtract through parity.

    Args:
        polys: Crown polygons
        grid: Target grid

    Returns:
        Single-band u8 raster with values in {0, 1}
    """
    _validate_polygons(polys)
    inside = np.zeros((grid.height, grid.width), dtype=bool)
    xs, ys = grid.pixel_centers()
    for poly in polys:
        x1, y1, x2, y2 = _edge_arrays(poly)
        r0, r1 = _index_range(float(min(y1.min(), y2.min())), float(max(y1.max(), y2.max())),
                              grid.origin_y, grid.pixel_size, grid.height, descending=True)
        for row in range(r0, r1):
            yc = ys[row]
            active = ((y1 <= yc) & (yc < y2)) | ((y2 <= yc) & (yc < y1))
            if not active.any():
                continue
            ax1, ay1, ax2, ay2 = x1[active], y1[active], x2[active], y2[active]
            xints = np.sort(ax1 + (yc - ay1) * (ax2 - ax1) / (ay2 - ay1))
            # crossings with xint > xc
            crossings = len(xints) - np.searchsorted(xints, xs, side='right')
            inside[row] |= (crossings % 2) == 1

    logger.info(f"Burned {len(polys)} polygons, {int(inside.sum())} pixels set")
    return Raster(grid, inside.astype(np.uint8)[np.newaxis])


def point_in_polygon(center: Point2, polygon: Polygon) -> bool:
    """Crossing-number test with the half-open edge convention"""
    crossings = 0
    for ring in polygon.rings:
        for i, p in enumerate(ring):
            q = ring[(i + 1) % len(ring)]
            if (p.y <= center.y < q.y) or (q.y <= center.y < p.y):
                xint = p.x + (center.y - p.y) * (q.x - p.x) / (q.y - p.y)
                if xint > center.x:
                    crossings += 1
    return crossings % 2 == 1


def polygon_mask_oracle(polys: Sequence[Polygon], grid: GridTransform) -> Raster:
    """Per-pixel brute-force crossing-number rasterization"""
    _validate_polygons(polys)
    data = np.zeros((1, grid.height, grid.width), dtype=np.uint8)
    for row in range(grid.height):
        for col in range(grid.width):
            center = pixel_center(grid, row, col)
            if any(point_in_polygon(center, poly) for poly in polys):
                data[0, row, col] = 1
    return Raster(grid, data)


def apply_mask(values: Raster, mask: Raster) -> Raster:
    """
    Keep samples where the mask is 1 and zero them elsewhere, in every band

    Args:
        values: Raster to mask
        mask: Single-band binary raster on the same grid

    Returns:
        Masked raster with the input dtype
    """
    require_same_grid(values, mask)
    require_binary(mask, 'mask')
    keep = mask.data[0] == 1
    out = np.where(keep[np.newaxis], values.data, np.zeros((), dtype=values.data.dtype))
    return Raster(values.grid, out.astype(values.data.dtype))

