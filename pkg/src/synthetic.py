"""
Synthetic Scenes for the Road-Mask Tree Mapping Toolkit

Desk-scale stand-in for aerial imagery: a noisy gray-green background,
straight dark road strips and bright green tree disks, together with the
road centerlines and 16-gon crown polygons that describe them. Every draw
comes from one splitmix64 stream, so a seed fully determines the scene.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from config.settings import SYNTHETIC_CONFIG
from src.exceptions import ValidationError
from src.geodata import FeatureSet, Point2, Polygon, Polyline
from src.maskgen import segment_distances
from src.raster import GridTransform, Raster
from src.rng import SplitMix64

logger = logging.getLogger(__name__)

MIN_SIZE = 64
PLACEMENT_ATTEMPTS = 100


@dataclass(frozen=True)
class TreeDisk:
    """Rendered crown in pixel coordinates (column, row) with radius in pixels"""
    cx: float
    cy: float
    radius: float


@dataclass(eq=False)
class SyntheticScene:
    """Imagery plus the vector geometry it was drawn from"""
    image: Raster
    roads: List[Polyline]
    crowns: List[Polygon]
    trees: List[TreeDisk]

    @property
    def grid(self) -> GridTransform:
        return self.image.grid

    def road_features(self) -> FeatureSet:
        return FeatureSet(polylines=list(self.roads))

    def crown_features(self) -> FeatureSet:
        return FeatureSet(polygons=list(self.crowns))


def _to_world(px: float, py: float, height: int, pixel_size: float) -> Point2:
    return Point2(px * pixel_size, (height - py) * pixel_size)


def _paint(image: np.ndarray, region: np.ndarray, rgb: Tuple[int, int, int], noise: np.ndarray) -> None:
    """Set ``region`` to ``rgb`` plus noise (float buffer, clipped later)"""
    for band in range(3):
        image[band][region] = rgb[band] + noise[band][region]


def _noise(rng: SplitMix64, amplitude: float, height: int, width: int) -> np.ndarray:
    return (rng.uniform_array(3 * height * width).reshape(3, height, width) * 2.0 - 1.0) * amplitude


def _road_endpoints(rng: SplitMix64, width: int, height: int) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    """Two points on opposite image edges, in pixel coordinates"""
    if rng.uniform() < 0.5:
        return (0.0, rng.uniform_range(0.1, 0.9) * height), (float(width), rng.uniform_range(0.1, 0.9) * height)
    return (rng.uniform_range(0.1, 0.9) * width, 0.0), (rng.uniform_range(0.1, 0.9) * width, float(height))


def _near_road_center(rng: SplitMix64, road: Tuple[Tuple[float, float], Tuple[float, float]],
                      radius: float, reach: float, width: int, height: int) -> Tuple[float, float]:
    (x0, y0), (x1, y1) = road
    length = math.hypot(x1 - x0, y1 - y0)
    nx, ny = -(y1 - y0) / length, (x1 - x0) / length
    cx = cy = 0.0
    for _ in range(PLACEMENT_ATTEMPTS):
        t = rng.uniform()
        offset = rng.uniform_range(-reach, reach)
        cx = x0 + t * (x1 - x0) + offset * nx
        cy = y0 + t * (y1 - y0) + offset * ny
        if radius <= cx <= width - radius and radius <= cy <= height - radius:
            return cx, cy
    return min(max(cx, radius), width - radius), min(max(cy, radius), height - radius)


def crown_polygon(tree: TreeDisk, height: int, pixel_size: float,
                  vertices: int = SYNTHETIC_CONFIG['crown_vertices']) -> Polygon:
    """
    Regular polygon with the same area as the disk

    The circumradius is scaled so that n/2 * R^2 * sin(2*pi/n) equals
    pi * r^2.
    """
    circumradius = tree.radius * math.sqrt(2.0 * math.pi / (vertices * math.sin(2.0 * math.pi / vertices)))
    ring = tuple(
        _to_world(tree.cx + circumradius * math.cos(2.0 * math.pi * k / vertices),
                  tree.cy + circumradius * math.sin(2.0 * math.pi * k / vertices),
                  height, pixel_size)
        for k in range(vertices)
    )
    return Polygon(outer=ring)


def generate_synthetic_scene(seed: int, width: int, height: int, n_trees: int, n_roads: int) -> SyntheticScene:
    """
    Draw a synthetic aerial scene

    Roads run straight between opposite edges. At least half of the trees
    (every even-indexed one, when roads exist) are centered within the
    configured distance of a road centerline; the rest are uniform over the
    image. Disks are kept inside the image where possible.

    Args:
        seed: 64-bit seed
        width: Columns (>= 64)
        height: Rows (>= 64)
        n_trees: Number of tree disks
        n_roads: Number of roads

    Returns:
        SyntheticScene with a 3-band u8 image on a grid with origin
        (0, height * pixel_size)
    """
    if width < MIN_SIZE or height < MIN_SIZE:
        raise ValidationError(f"Synthetic scenes need at least {MIN_SIZE}x{MIN_SIZE} pixels, got {width}x{height}")
    if n_trees < 0 or n_roads < 0:
        raise ValidationError("Tree and road counts must be >= 0")

    cfg = SYNTHETIC_CONFIG
    pixel_size = cfg['pixel_size']
    grid = GridTransform(0.0, height * pixel_size, pixel_size, width, height)
    rng = SplitMix64(seed)

    image = np.empty((3, height, width), dtype=np.float64)
    _paint(image, np.ones((height, width), dtype=bool), cfg['background_rgb'],
           _noise(rng, cfg['background_noise'], height, width))

    road_ends = []
    road_widths = []
    for _ in range(n_roads):
        road_ends.append(_road_endpoints(rng, width, height))
        road_widths.append(rng.uniform_range(*cfg['road_width']))

    trees = []
    for index in range(n_trees):
        radius = rng.uniform_range(*cfg['tree_radius'])
        if road_ends and index % 2 == 0:
            road = road_ends[rng.below(len(road_ends))]
            cx, cy = _near_road_center(rng, road, radius, cfg['tree_road_distance'], width, height)
        else:
            cx = rng.uniform_range(radius, width - radius)
            cy = rng.uniform_range(radius, height - radius)
        trees.append(TreeDisk(cx, cy, radius))

    cols = np.arange(width, dtype=np.float64) + 0.5
    rows = np.arange(height, dtype=np.float64) + 0.5
    road_noise = _noise(rng, cfg['road_noise'], height, width)
    for ((x0, y0), (x1, y1)), road_width in zip(road_ends, road_widths):
        strip = segment_distances(cols, rows, Point2(x0, y0), Point2(x1, y1)) <= road_width / 2.0
        _paint(image, strip, cfg['road_rgb'], road_noise)

    tree_noise = _noise(rng, cfg['tree_noise'], height, width)
    for tree in trees:
        disk = (cols[np.newaxis, :] - tree.cx) ** 2 + (rows[:, np.newaxis] - tree.cy) ** 2 <= tree.radius ** 2
        _paint(image, disk, cfg['tree_rgb'], tree_noise)

    pixels = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    roads = [Polyline((_to_world(x0, y0, height, pixel_size), _to_world(x1, y1, height, pixel_size)))
             for (x0, y0), (x1, y1) in road_ends]
    crowns = [crown_polygon(tree, height, pixel_size, cfg['crown_vertices']) for tree in trees]

    logger.info(f"Generated {width}x{height} synthetic scene (seed {seed}, {n_trees} trees, {n_roads} roads)")
    return SyntheticScene(Raster(grid, pixels), roads, crowns, trees)
