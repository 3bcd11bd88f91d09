"""
Raster grid and container for the Road-Mask Tree Mapping Toolkit

Defines the north-up pixel grid, the RRAS binary raster container shared by
every pipeline stage, and PGM/PPM previews for visual inspection.
"""

import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from src.exceptions import BoundsError, FormatError, ValidationError
from src.geodata import Point2

logger = logging.getLogger(__name__)

RRAS_MAGIC = b'RRASTER1'
DTYPES = {'u8': np.dtype('<u1'), 'f32': np.dtype('<f4')}
NATIVE = {'u8': np.uint8, 'f32': np.float32}
GRID_KEYS = ('origin_x', 'origin_y', 'pixel_size', 'width', 'height')

PathLike = Union[str, Path]


@dataclass(frozen=True)
class GridTransform:
    """North-up affine pixel grid; y decreases as row increases"""
    origin_x: float
    origin_y: float
    pixel_size: float
    width: int
    height: int

    def __post_init__(self):
        if not (math.isfinite(self.pixel_size) and self.pixel_size > 0):
            raise ValidationError(f"pixel_size must be positive, got {self.pixel_size}")
        if not (math.isfinite(self.origin_x) and math.isfinite(self.origin_y)):
            raise ValidationError("Grid origin must be finite")
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValidationError("Grid width and height must be integers")
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"Grid must be at least 1x1, got {self.width}x{self.height}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'GridTransform':
        """Build from a grid mapping; rotation/shear terms are rejected"""
        for key in ('rotation_x', 'rotation_y', 'shear_x', 'shear_y'):
            if data.get(key, 0) not in (0, 0.0):
                raise ValidationError(f"Only north-up grids are supported ({key} must be 0)")
        missing = [k for k in GRID_KEYS if k not in data]
        if missing:
            raise ValidationError(f"Grid is missing keys: {', '.join(missing)}")
        try:
            return cls(
                origin_x=float(data['origin_x']),
                origin_y=float(data['origin_y']),
                pixel_size=float(data['pixel_size']),
                width=int(data['width']),
                height=int(data['height'])
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, ValidationError):
                raise
            raise ValidationError(f"Invalid grid values: {e}")

    @classmethod
    def load(cls, path: PathLike) -> 'GridTransform':
        """Read a grid JSON file"""
        text = Path(path).read_text(encoding='utf-8')
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise FormatError(f"Malformed grid JSON in {path}: {e.msg}", offset=e.pos)
        if not isinstance(data, dict):
            raise FormatError(f"Grid JSON in {path} must be an object")
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'origin_x': self.origin_x,
            'origin_y': self.origin_y,
            'pixel_size': self.pixel_size,
            'width': self.width,
            'height': self.height
        }

    def pixel_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Center x per column and center y per row, same arithmetic as pixel_center"""
        cols = np.arange(self.width, dtype=np.float64)
        rows = np.arange(self.height, dtype=np.float64)
        xs = self.origin_x + (cols + 0.5) * self.pixel_size
        ys = self.origin_y - (rows + 0.5) * self.pixel_size
        return xs, ys


def pixel_center(grid: GridTransform, row: int, col: int) -> Point2:
    """
    World coordinates of a pixel center

    Args:
        grid: Pixel grid
        row: Row index
        col: Column index

    Returns:
        Center point
    """
    if not (0 <= row < grid.height and 0 <= col < grid.width):
        raise BoundsError(f"Pixel ({row}, {col}) outside {grid.height}x{grid.width} grid")
    x = grid.origin_x + (col + 0.5) * grid.pixel_size
    y = grid.origin_y - (row + 0.5) * grid.pixel_size
    return Point2(x, y)


def world_to_pixel(grid: GridTransform, point: Point2) -> Optional[Tuple[int, int]]:
    """Pixel (row, col) containing ``point``, or None when outside the grid"""
    col = math.floor((point.x - grid.origin_x) / grid.pixel_size)
    row = math.floor((grid.origin_y - point.y) / grid.pixel_size)
    if 0 <= row < grid.height and 0 <= col < grid.width:
        return row, col
    return None


@dataclass(frozen=True, eq=False)
class Raster:
    """Band-sequential samples of shape (bands, height, width) on a grid"""
    grid: GridTransform
    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValidationError(f"Raster data must be (bands, height, width), got shape {self.data.shape}")
        if self.data.shape[1:] != (self.grid.height, self.grid.width):
            raise ValidationError(
                f"Raster data shape {self.data.shape[1:]} does not match grid "
                f"{self.grid.height}x{self.grid.width}"
            )
        if self.data.shape[0] < 1:
            raise ValidationError("Raster needs at least one band")
        if self.data.dtype not in (np.uint8, np.float32):
            raise ValidationError(f"Unsupported raster dtype {self.data.dtype}")

    @classmethod
    def zeros(cls, grid: GridTransform, bands: int = 1, dtype: str = 'u8') -> 'Raster':
        return cls(grid, np.zeros((bands, grid.height, grid.width), dtype=NATIVE[dtype]))

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def dtype(self) -> str:
        return 'u8' if self.data.dtype == np.uint8 else 'f32'

    def is_binary(self) -> bool:
        return self.dtype == 'u8' and bool(np.all(self.data <= 1))

    def same_grid(self, other: 'Raster') -> bool:
        return self.grid == other.grid


def require_same_grid(*rasters: Raster) -> None:
    """Raise ValidationError unless all rasters share one grid"""
    first = rasters[0].grid
    for raster in rasters[1:]:
        if raster.grid != first:
            raise ValidationError(f"Grid mismatch: {first} vs {raster.grid}")


def require_binary(raster: Raster, name: str) -> None:
    if raster.bands != 1 or not raster.is_binary():
        raise ValidationError(f"{name} must be a single-band binary u8 raster")


def rras_write(raster: Raster, path: PathLike) -> None:
    """
    Write a raster in the RRAS container

    Layout: magic, u32-LE header length, JSON header, little-endian samples
    (band-sequential, row-major).
    """
    header = dict(raster.grid.to_dict(), bands=raster.bands, dtype=raster.dtype)
    header_bytes = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')
    payload = np.ascontiguousarray(raster.data, dtype=DTYPES[raster.dtype]).tobytes()
    with open(path, 'wb') as f:
        f.write(RRAS_MAGIC)
        f.write(struct.pack('<I', len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)
    logger.info(f"Wrote {raster.bands}-band {raster.dtype} raster "
                f"{raster.grid.width}x{raster.grid.height} to {path}")


def read_container_header(blob: bytes, magic: bytes, kind: str) -> Tuple[Dict[str, Any], int]:
    """
    Validate magic and decode the JSON header shared by all containers

    Returns:
        Header mapping and the offset where the payload starts
    """
    if len(blob) < len(magic) + 4:
        raise FormatError(f"{kind} file truncated before header", offset=len(blob))
    if blob[:len(magic)] != magic:
        raise FormatError(f"Bad {kind} magic {blob[:len(magic)]!r}, expected {magic!r}", offset=0)
    (length,) = struct.unpack('<I', blob[len(magic):len(magic) + 4])
    start = len(magic) + 4
    if len(blob) < start + length:
        raise FormatError(f"{kind} header truncated: need {length} bytes", offset=len(blob))
    try:
        header = json.loads(blob[start:start + length].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"Malformed {kind} header: {e}", offset=start)
    if not isinstance(header, dict):
        raise FormatError(f"{kind} header must be a JSON object", offset=start)
    return header, start + length


def rras_read(path: PathLike) -> Raster:
    """Read an RRAS file written by rras_write"""
    blob = Path(path).read_bytes()
    header, offset = read_container_header(blob, RRAS_MAGIC, 'RRAS')
    dtype = header.get('dtype')
    if dtype not in DTYPES:
        raise FormatError(f"Unknown RRAS dtype {dtype!r}")
    try:
        grid = GridTransform.from_dict(header)
        bands = int(header['bands'])
    except (KeyError, ValidationError) as e:
        raise FormatError(f"Invalid RRAS header: {e}")
    if bands < 1:
        raise FormatError(f"Invalid RRAS band count {bands}")
    expected = bands * grid.width * grid.height * DTYPES[dtype].itemsize
    actual = len(blob) - offset
    if actual != expected:
        raise FormatError(f"RRAS payload has {actual} bytes, expected {expected}", offset=offset)
    data = np.frombuffer(blob, dtype=DTYPES[dtype], offset=offset).reshape(bands, grid.height, grid.width)
    return Raster(grid, data.astype(NATIVE[dtype]))


def export_preview(raster: Raster, path: PathLike, bands: Optional[Sequence[int]] = None,
                   scale: Optional[float] = None) -> None:
    """
    Write a binary PGM (one band) or PPM (three bands) preview

    Args:
        raster: Source raster
        path: Output file
        bands: Band indices to map; defaults to band 0, or 0,1,2 for 3+ bands
        scale: Multiplier for u8 samples, clipped to 255 (e.g. 255 for masks)
    """
    if bands is None:
        bands = [0, 1, 2] if raster.bands >= 3 else [0]
    bands = list(bands)
    if len(bands) not in (1, 3):
        raise ValidationError(f"Preview needs 1 or 3 bands, got {len(bands)}")
    for b in bands:
        if not 0 <= b < raster.bands:
            raise BoundsError(f"Band index {b} out of range for {raster.bands}-band raster")

    selected = raster.data[bands]
    if raster.dtype == 'u8':
        pixels = selected.astype(np.float64)
        if scale is not None:
            pixels = pixels * scale
        pixels = np.clip(pixels, 0, 255).astype(np.uint8)
    else:
        values = selected.astype(np.float64)
        finite = np.isfinite(values)
        pixels = np.zeros(values.shape, dtype=np.uint8)
        if not finite.all():
            logger.warning(f"Preview maps {int((~finite).sum())} non-finite samples to 0")
        if finite.any():
            low, high = float(values[finite].min()), float(values[finite].max())
            if high > low:
                pixels[finite] = np.round((values[finite] - low) / (high - low) * 255.0).astype(np.uint8)

    if len(bands) == 1:
        image = Image.fromarray(pixels[0])
    else:
        image = Image.fromarray(np.ascontiguousarray(pixels.transpose(1, 2, 0)))
    image.save(path, format='PPM')
    logger.info(f"Wrote preview {path}")
