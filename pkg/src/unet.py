"""
U-Net Model for the Road-Mask Tree Mapping Toolkit

Assembles the encoder/decoder network from the autodiff ops, adds the
mask-aware loss and output coating, and reads/writes MKCKPT01 checkpoints.
"""

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Tuple, Union

import numpy as np

from config.settings import UNET_CONFIG
from src.autodiff import (
    Tensor,
    _accumulate,
    _as_tensor,
    _result,
    concat_channels,
    conv2d,
    maxpool2,
    multiply_constant,
    relu,
    upsample2,
)
from src.exceptions import FormatError, ValidationError
from src.raster import read_container_header
from src.rng import SplitMix64

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b'MKCKPT01'

PathLike = Union[str, Path]
ParamLike = Union[Tensor, np.ndarray]


@dataclass(frozen=True)
class UNetConfig:
    """Shape of the network; inputs need H and W divisible by 2**levels"""
    in_channels: int = UNET_CONFIG['in_channels']
    out_channels: int = UNET_CONFIG['out_channels']
    levels: int = UNET_CONFIG['levels']
    base_filters: int = UNET_CONFIG['base_filters']

    def __post_init__(self):
        if self.levels < 1:
            raise ValidationError(f"levels must be >= 1, got {self.levels}")
        if self.base_filters < 1:
            raise ValidationError(f"base_filters must be >= 1, got {self.base_filters}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValidationError("Channel counts must be >= 1")

    @property
    def divisor(self) -> int:
        return 2 ** self.levels

    def filters(self, level: int) -> int:
        return self.base_filters * 2 ** level

    def param_shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        """Parameter names and shapes in canonical (execution) order"""
        shapes: List[Tuple[str, Tuple[int, ...]]] = []

        def conv(name: str, cout: int, cin: int, k: int = 3):
            shapes.append((f"{name}.weight", (cout, cin, k, k)))
            shapes.append((f"{name}.bias", (cout,)))

        cin = self.in_channels
        for level in range(self.levels):
            conv(f"enc{level}.conv1", self.filters(level), cin)
            conv(f"enc{level}.conv2", self.filters(level), self.filters(level))
            cin = self.filters(level)
        bottom = self.filters(self.levels)
        conv('bottleneck.conv1', bottom, cin)
        conv('bottleneck.conv2', bottom, bottom)
        cin = bottom
        for level in reversed(range(self.levels)):
            width = self.filters(level)
            conv(f"dec{level}.up", width, cin)
            conv(f"dec{level}.conv1", width, 2 * width)
            conv(f"dec{level}.conv2", width, width)
            cin = width
        conv('head', self.out_channels, cin, k=1)
        return shapes

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)


class ModelParams:
    """Named float32 parameter arrays in canonical order"""

    def __init__(self, arrays: Mapping[str, np.ndarray]):
        self.arrays: Dict[str, np.ndarray] = dict(arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.arrays[name] = value

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def __len__(self) -> int:
        return len(self.arrays)

    def names(self) -> List[str]:
        return list(self.arrays)

    def items(self):
        return self.arrays.items()

    def copy(self) -> 'ModelParams':
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self) -> 'ModelParams':
        return ModelParams({k: np.zeros_like(v) for k, v in self.arrays.items()})

    def as_tensors(self, requires_grad: bool = True) -> Dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.arrays.items()}

    def equals(self, other: 'ModelParams') -> bool:
        """Bitwise equality of names, shapes and values"""
        if self.names() != other.names():
            return False
        return all(np.array_equal(self[k].view(np.uint32), other[k].view(np.uint32)) for k in self)

    def check(self, cfg: UNetConfig) -> None:
        expected = cfg.param_shapes()
        actual = [(k, tuple(v.shape)) for k, v in self.arrays.items()]
        if actual != expected:
            raise ValidationError("Parameters do not match the U-Net configuration")


def init_params(cfg: UNetConfig, seed: int) -> ModelParams:
    """
    He-normal weights, zero biases

    Weights are drawn in canonical order from one splitmix64 stream via
    Box-Muller, scaled by sqrt(2 / fan_in).

    Args:
        cfg: Network shape
        seed: 64-bit seed

    Returns:
        ModelParams
    """
    rng = SplitMix64(seed)
    arrays = {}
    for name, shape in cfg.param_shapes():
        if name.endswith('.bias'):
            arrays[name] = np.zeros(shape, dtype=np.float32)
            continue
        fan_in = shape[1] * shape[2] * shape[3]
        draws = rng.normal_array(int(np.prod(shape))) * math.sqrt(2.0 / fan_in)
        arrays[name] = draws.astype(np.float32).reshape(shape)
    logger.info(f"Initialised U-Net with {sum(v.size for v in arrays.values())} parameters (seed {seed})")
    return ModelParams(arrays)


def _block(x: Tensor, params: Mapping[str, ParamLike], name: str) -> Tensor:
    x = relu(conv2d(x, _as_tensor(params[f"{name}.conv1.weight"]), _as_tensor(params[f"{name}.conv1.bias"])))
    return relu(conv2d(x, _as_tensor(params[f"{name}.conv2.weight"]), _as_tensor(params[f"{name}.conv2.bias"])))


def unet_forward(cfg: UNetConfig, params: Mapping[str, ParamLike], x: ParamLike) -> Tensor:
    """
    Run the U-Net and return logits

    Args:
        cfg: Network shape
        params: Parameter arrays or tensors by name
        x: Input (N, in_channels, H, W)

    Returns:
        Logits (N, out_channels, H, W)
    """
    x = _as_tensor(x)
    if x.data.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ValidationError(f"Expected input (N, {cfg.in_channels}, H, W), got {x.shape}")
    height, width = x.shape[2:]
    if height % cfg.divisor or width % cfg.divisor:
        raise ValidationError(f"Input {height}x{width} is not divisible by {cfg.divisor}")

    skips = []
    for level in range(cfg.levels):
        x = _block(x, params, f"enc{level}")
        skips.append(x)
        x = maxpool2(x)
    x = _block(x, params, 'bottleneck')
    for level in reversed(range(cfg.levels)):
        up = upsample2(x)
        up = relu(conv2d(up, _as_tensor(params[f"dec{level}.up.weight"]), _as_tensor(params[f"dec{level}.up.bias"])))
        x = _block(concat_channels(up, skips[level]), params, f"dec{level}")
    return conv2d(x, _as_tensor(params['head.weight']), _as_tensor(params['head.bias']))


def coat_output(probs: ParamLike, mask: np.ndarray) -> Tensor:
    """
    Multiply probabilities by the validity mask

    Args:
        probs: Probabilities (N, 1, H, W)
        mask: Binary mask of the same shape

    Returns:
        Coated probabilities, exactly 0 where the mask is 0
    """
    mask = np.asarray(mask)
    if np.any((mask != 0) & (mask != 1)):
        raise ValidationError("Mask values must be 0 or 1")
    return multiply_constant(probs, mask)


def masked_bce_with_logits(logits: Tensor, labels: np.ndarray, mask: np.ndarray,
                           weights: Optional[np.ndarray] = None) -> Tensor:
    """
    Binary cross-entropy on logits averaged over mask pixels

    Mask-0 pixels contribute exactly zero to the value and the gradient,
    whatever their labels. ``weights`` scales each pixel's term (e.g. to
    emphasise crown edges).

    Args:
        logits: Model output
        labels: Targets in {0, 1}
        mask: Validity mask in {0, 1}
        weights: Optional non-negative per-pixel weights

    Returns:
        Scalar loss tensor
    """
    logits = _as_tensor(logits)
    z = logits.data
    labels = np.asarray(labels)
    mask = np.asarray(mask)
    if labels.shape != z.shape or mask.shape != z.shape:
        raise ValidationError(f"Loss shapes differ: logits {z.shape}, labels {labels.shape}, mask {mask.shape}")
    if weights is None:
        weights = np.ones_like(z)
    else:
        weights = np.asarray(weights, dtype=z.dtype)
        if weights.shape != z.shape:
            raise ValidationError(f"Weight shape {weights.shape} does not match logits {z.shape}")
        if np.any(weights < 0):
            raise ValidationError("Loss weights must be non-negative")

    active = mask != 0
    y = labels.astype(z.dtype)
    terms = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    weighted = np.where(active, weights * terms, np.zeros((), dtype=z.dtype))
    denom = max(float(np.count_nonzero(active)), 1.0)
    value = np.asarray(weighted.sum() / denom, dtype=z.dtype)

    result = _result(value, (logits,))

    def backward():
        e = np.exp(-np.abs(z))
        probs = np.where(z >= 0, 1 / (1 + e), e / (1 + e))
        grad = np.where(active, weights * (probs - y) / denom, np.zeros((), dtype=z.dtype))
        _accumulate(logits, (grad * result.grad).astype(z.dtype))

    result._backward = backward
    return result


@dataclass
class Checkpoint:
    """Model configuration, parameters and the mask mode they were trained with"""
    config: UNetConfig
    params: ModelParams
    mask_mode: str = 'channel'


def checkpoint_write(params: ModelParams, cfg: UNetConfig, path: PathLike, mask_mode: str = 'channel') -> None:
    """
    Write parameters to the MKCKPT01 container

    Layout: magic, u32-LE header length, JSON header {config, mask_mode,
    tensors: [{name, shape, offset}]}, then float32-LE data at byte offsets.
    """
    params.check(cfg)
    index = []
    offset = 0
    for name, array in params.items():
        index.append({'name': name, 'shape': list(array.shape), 'offset': offset})
        offset += array.size * 4
    header = {'config': cfg.to_dict(), 'mask_mode': mask_mode, 'tensors': index}
    header_bytes = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')
    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack('<I', len(header_bytes)))
        f.write(header_bytes)
        for array in params.arrays.values():
            f.write(np.ascontiguousarray(array, dtype='<f4').tobytes())
    logger.info(f"Wrote checkpoint with {len(params)} tensors to {path}")


def checkpoint_read(path: PathLike, expected: Optional[UNetConfig] = None) -> Checkpoint:
    """
    Read a MKCKPT01 checkpoint

    Args:
        path: Checkpoint file
        expected: When given, the stored configuration must equal it

    Returns:
        Checkpoint
    """
    blob = Path(path).read_bytes()
    header, offset = read_container_header(blob, CHECKPOINT_MAGIC, 'MKCKPT01')
    try:
        cfg = UNetConfig(**header['config'])
        entries = header['tensors']
        mask_mode = str(header.get('mask_mode', 'channel'))
    except (KeyError, TypeError, ValidationError) as e:
        raise FormatError(f"Invalid MKCKPT01 header: {e}")
    if expected is not None and cfg != expected:
        raise ValidationError(f"Checkpoint config {cfg} does not match requested {expected}")

    payload = len(blob) - offset
    expected_layout = cfg.param_shapes()
    try:
        layout = [(e.get('name'), tuple(e.get('shape', ()))) for e in entries]
    except (AttributeError, TypeError) as e:
        raise FormatError(f"Invalid MKCKPT01 tensor index: {e}")
    if layout != expected_layout:
        raise FormatError("MKCKPT01 tensor index does not match its config")
    arrays = {}
    cursor = 0
    for entry, (name, shape) in zip(entries, expected_layout):
        size = int(np.prod(shape))
        if entry.get('offset') != cursor:
            raise FormatError(f"Tensor {name} has offset {entry.get('offset')}, expected {cursor}")
        if cursor + size * 4 > payload:
            raise FormatError(f"MKCKPT01 payload truncated in tensor {name}", offset=offset + payload)
        data = np.frombuffer(blob, dtype='<f4', count=size, offset=offset + cursor)
        arrays[name] = data.astype(np.float32).reshape(shape)
        cursor += size * 4
    if cursor != payload:
        raise FormatError(f"MKCKPT01 payload has {payload} bytes, expected {cursor}", offset=offset)
    return Checkpoint(cfg, ModelParams(arrays), mask_mode)
