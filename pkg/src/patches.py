"""
Patch Extraction for the Road-Mask Tree Mapping Toolkit

Slices aligned image/mask/label rasters into fixed-size training patches,
assigns train/val/test splits reproducibly and stores them in the MKPATCH1
archive.
"""

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import PATCH_CONFIG
from src.exceptions import FormatError, ValidationError
from src.raster import GridTransform, Raster, read_container_header, require_binary, require_same_grid
from src.rng import SplitMix64

logger = logging.getLogger(__name__)

ARCHIVE_MAGIC = b'MKPATCH1'
SPLITS = ('train', 'val', 'test')

PathLike = Union[str, Path]


@dataclass(frozen=True)
class PatchSpec:
    """Window size and stride in pixels"""
    size: int = PATCH_CONFIG['size']
    stride: int = PATCH_CONFIG['stride']

    def __post_init__(self):
        if self.size < 1:
            raise ValidationError(f"Patch size must be >= 1, got {self.size}")
        if not 1 <= self.stride <= self.size:
            raise ValidationError(f"Stride must lie in [1, {self.size}], got {self.stride}")


@dataclass(eq=False)
class Patch:
    """One training sample: normalised RGB, mask and label windows"""
    image: np.ndarray  # f32 (3, size, size) in [0, 1]
    mask: np.ndarray   # u8 (size, size)
    label: np.ndarray  # u8 (size, size)
    row0: int
    col0: int

    @property
    def size(self) -> int:
        return self.mask.shape[0]


@dataclass
class SplitAssignment:
    """Per-patch split tags and how they were drawn"""
    tags: List[str]
    seed: int
    fractions: Tuple[float, float, float]

    def indices(self, tag: str) -> List[int]:
        return [i for i, t in enumerate(self.tags) if t == tag]

    def counts(self) -> Dict[str, int]:
        return {tag: self.tags.count(tag) for tag in SPLITS}


@dataclass(eq=False)
class PatchArchive:
    """Patches with their window spec, source grid and split assignment"""
    spec: PatchSpec
    grid: GridTransform
    patches: List[Patch]
    assignment: SplitAssignment

    def split(self, tag: str) -> List[Patch]:
        return [self.patches[i] for i in self.assignment.indices(tag)]


def _starts(dim: int, spec: PatchSpec) -> List[int]:
    if dim < spec.size:
        return [0]
    return list(range(0, dim - spec.size + 1, spec.stride))


def plan_windows(height: int, width: int, spec: PatchSpec = PatchSpec()) -> List[Tuple[int, int]]:
    """
    Window origins, row-major, with every window inside the raster

    A dimension smaller than the window gets the single start 0 and the
    window is zero padded.

    Args:
        height: Raster rows
        width: Raster columns
        spec: Window size and stride

    Returns:
        Ordered (row0, col0) list
    """
    return [(r, c) for r in _starts(height, spec) for c in _starts(width, spec)]


def crop_window(data: np.ndarray, row0: int, col0: int, size: int) -> np.ndarray:
    """Window of a (bands, H, W) array, zero filled outside the raster"""
    bands, height, width = data.shape
    out = np.zeros((bands, size, size), dtype=data.dtype)
    rows = min(size, height - row0)
    cols = min(size, width - col0)
    if rows > 0 and cols > 0:
        out[:, :rows, :cols] = data[:, row0:row0 + rows, col0:col0 + cols]
    return out


def extract_patches(image: Raster, mask: Raster, label: Raster,
                    spec: PatchSpec = PatchSpec()) -> List[Patch]:
    """
    Cut one patch per planned window

    Args:
        image: 3-band u8 imagery
        mask: Binary validity mask
        label: Binary crown labels

    Returns:
        Patches in window order
    """
    require_same_grid(image, mask, label)
    if image.bands != 3 or image.dtype != 'u8':
        raise ValidationError("Image must be a 3-band u8 raster")
    require_binary(mask, 'mask')
    require_binary(label, 'label')

    patches = []
    for row0, col0 in plan_windows(image.grid.height, image.grid.width, spec):
        rgb = crop_window(image.data, row0, col0, spec.size).astype(np.float32) / np.float32(255.0)
        patches.append(Patch(
            image=rgb,
            mask=crop_window(mask.data, row0, col0, spec.size)[0],
            label=crop_window(label.data, row0, col0, spec.size)[0],
            row0=row0,
            col0=col0
        ))
    logger.info(f"Extracted {len(patches)} patches of {spec.size}x{spec.size} (stride {spec.stride})")
    return patches


def _validate_fractions(fractions: Sequence[float]) -> Tuple[float, float, float]:
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValidationError(f"Fractions must be three non-negative numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"Fractions must sum to 1, got {sum(fractions)}")
    return tuple(float(f) for f in fractions)


def split_assign(n: int, fractions: Sequence[float] = PATCH_CONFIG['fractions'],
                 seed: int = PATCH_CONFIG['seed']) -> SplitAssignment:
    """
    Assign ``n`` patches to train/val/test

    Counts follow the floor rule (test and val floored, train takes the
    rest); membership comes from a splitmix64 Fisher-Yates shuffle.

    Args:
        n: Number of patches
        fractions: (train, val, test) fractions
        seed: 64-bit seed

    Returns:
        SplitAssignment
    """
    if n < 0:
        raise ValidationError(f"Patch count must be >= 0, got {n}")
    fractions = _validate_fractions(fractions)
    n_test = math.floor(fractions[2] * n)
    n_val = math.floor(fractions[1] * n)
    n_train = n - n_val - n_test

    order = SplitMix64(seed).permutation(n)
    tags = [''] * n
    for position, index in enumerate(order):
        if position < n_train:
            tags[index] = 'train'
        elif position < n_train + n_val:
            tags[index] = 'val'
        else:
            tags[index] = 'test'
    logger.info(f"Split {n} patches into {n_train}/{n_val}/{n_test} (seed {seed})")
    return SplitAssignment(tags, seed, fractions)


def archive_write(patches: Sequence[Patch], assignment: SplitAssignment, path: PathLike,
                  spec: PatchSpec = PatchSpec(), grid: Optional[GridTransform] = None) -> None:
    """
    Write patches to the MKPATCH1 container

    Layout: magic, u32-LE manifest length, JSON manifest, then per patch
    the f32-LE image (3*size*size), u8 mask and u8 label.
    """
    if len(patches) != len(assignment.tags):
        raise ValidationError(f"{len(patches)} patches but {len(assignment.tags)} split tags")
    for patch in patches:
        if (patch.image.shape != (3, spec.size, spec.size)
                or patch.mask.shape != (spec.size, spec.size)
                or patch.label.shape != (spec.size, spec.size)):
            raise ValidationError(f"Patch at ({patch.row0}, {patch.col0}) does not match size {spec.size}")

    manifest = {
        'size': spec.size,
        'stride': spec.stride,
        'count': len(patches),
        'seed': assignment.seed,
        'fractions': list(assignment.fractions),
        'grid': grid.to_dict() if grid is not None else None,
        'entries': [
            {'row0': p.row0, 'col0': p.col0, 'split': tag}
            for p, tag in zip(patches, assignment.tags)
        ]
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True, separators=(',', ':')).encode('utf-8')
    with open(path, 'wb') as f:
        f.write(ARCHIVE_MAGIC)
        f.write(struct.pack('<I', len(manifest_bytes)))
        f.write(manifest_bytes)
        for patch in patches:
            f.write(np.ascontiguousarray(patch.image, dtype='<f4').tobytes())
            f.write(np.ascontiguousarray(patch.mask, dtype=np.uint8).tobytes())
            f.write(np.ascontiguousarray(patch.label, dtype=np.uint8).tobytes())
    logger.info(f"Wrote {len(patches)} patches to {path}")


def archive_read(path: PathLike) -> PatchArchive:
    """Read a MKPATCH1 archive"""
    blob = Path(path).read_bytes()
    manifest, offset = read_container_header(blob, ARCHIVE_MAGIC, 'MKPATCH1')
    try:
        spec = PatchSpec(int(manifest['size']), int(manifest['stride']))
        count = int(manifest['count'])
        entries: List[Dict[str, Any]] = manifest['entries']
        if not isinstance(entries, list) or not all(isinstance(e, dict) for e in entries):
            raise TypeError("entries must be a list of objects")
        positions = [(int(e['row0']), int(e['col0'])) for e in entries]
        assignment = SplitAssignment(
            tags=[e['split'] for e in entries],
            seed=int(manifest['seed']),
            fractions=tuple(float(f) for f in manifest['fractions'])
        )
        grid = GridTransform.from_dict(manifest['grid']) if manifest.get('grid') else None
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"Invalid MKPATCH1 manifest: {e}")
    if len(entries) != count or any(t not in SPLITS for t in assignment.tags):
        raise FormatError("MKPATCH1 manifest entries are inconsistent with its count")

    plane = spec.size * spec.size
    record = 3 * plane * 4 + 2 * plane
    if len(blob) - offset != count * record:
        raise FormatError(f"MKPATCH1 payload has {len(blob) - offset} bytes, expected {count * record}",
                          offset=offset)

    patches = []
    for i, (row0, col0) in enumerate(positions):
        base = offset + i * record
        image = np.frombuffer(blob, dtype='<f4', count=3 * plane, offset=base)
        mask = np.frombuffer(blob, dtype=np.uint8, count=plane, offset=base + 3 * plane * 4)
        label = np.frombuffer(blob, dtype=np.uint8, count=plane, offset=base + 3 * plane * 4 + plane)
        patches.append(Patch(
            image=image.astype(np.float32).reshape(3, spec.size, spec.size),
            mask=mask.copy().reshape(spec.size, spec.size),
            label=label.copy().reshape(spec.size, spec.size),
            row0=row0,
            col0=col0
        ))
    return PatchArchive(spec, grid, patches, assignment)
