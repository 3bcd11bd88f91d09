"""
Training and Inference Pipeline for the Road-Mask Tree Mapping Toolkit

Adam training over a patch archive with the masked loss, masked
evaluation, and tiled full-raster prediction with mask coating.
"""

import json
import logging
import math
import re
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from config.settings import INFERENCE_CONFIG, TRAIN_CONFIG, UNET_CONFIG, progress_enabled
from src.autodiff import sigmoid
from src.exceptions import FormatError, ValidationError
from src.patches import Patch, PatchArchive, crop_window
from src.raster import Raster, require_binary, require_same_grid
from src.rng import SplitMix64, derive_seed
from src.unet import (
    Checkpoint,
    ModelParams,
    UNetConfig,
    coat_output,
    init_params,
    masked_bce_with_logits,
    unet_forward,
)

logger = logging.getLogger(__name__)

MASK_MODES = ('channel', 'premultiply', 'fixed_fill')
FIXED_FILL_PATTERN = re.compile(r'^fixed_fill\(\s*([^)]+?)\s*\)$')

PathLike = Union[str, Path]


@dataclass(frozen=True)
class MaskMode:
    """How the validity mask enters the model input"""
    kind: str = 'channel'
    fill_value: float = 0.0

    def __post_init__(self):
        if self.kind not in MASK_MODES:
            raise ValidationError(f"Unknown mask mode {self.kind!r}; expected one of {', '.join(MASK_MODES)}")
        if not math.isfinite(self.fill_value):
            raise ValidationError("fill_value must be finite")

    @classmethod
    def parse(cls, text: str, fill_value: float = 0.0) -> 'MaskMode':
        """Accepts 'channel', 'premultiply', 'fixed_fill' and 'fixed_fill(v)'"""
        match = FIXED_FILL_PATTERN.match(text.strip())
        if match:
            try:
                return cls('fixed_fill', float(match.group(1)))
            except ValueError:
                raise ValidationError(f"Invalid fill value in mask mode {text!r}")
        return cls(text.strip(), float(fill_value))

    @property
    def in_channels(self) -> int:
        return 4 if self.kind == 'channel' else 3

    def __str__(self) -> str:
        if self.kind == 'fixed_fill':
            return f"fixed_fill({self.fill_value!r})"
        return self.kind


def build_model_input(images: np.ndarray, masks: np.ndarray, mode: MaskMode) -> np.ndarray:
    """
    Stack imagery and mask into the network input

    Args:
        images: Normalised RGB (N, 3, H, W)
        masks: Binary masks (N, H, W)
        mode: channel appends the mask; premultiply zeroes mask-0 pixels;
            fixed_fill replaces mask-0 pixels with the fill value

    Returns:
        float32 array (N, mode.in_channels, H, W)
    """
    images = np.asarray(images, dtype=np.float32)
    masks = np.asarray(masks)
    if images.ndim != 4 or images.shape[1] != 3:
        raise ValidationError(f"Expected RGB input (N, 3, H, W), got {images.shape}")
    if masks.shape != (images.shape[0],) + images.shape[2:]:
        raise ValidationError(f"Mask shape {masks.shape} does not match imagery {images.shape}")

    keep = masks[:, np.newaxis] == 1
    if mode.kind == 'channel':
        return np.concatenate([images, keep.astype(np.float32)], axis=1)
    if mode.kind == 'premultiply':
        return images * keep.astype(np.float32)
    return np.where(keep, images, np.float32(mode.fill_value)).astype(np.float32)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer, schedule and model shape for one training run"""
    learning_rate: float = TRAIN_CONFIG['learning_rate']
    beta1: float = TRAIN_CONFIG['beta1']
    beta2: float = TRAIN_CONFIG['beta2']
    epsilon: float = TRAIN_CONFIG['epsilon']
    batch_size: int = TRAIN_CONFIG['batch_size']
    epochs: int = TRAIN_CONFIG['epochs']
    seed: int = TRAIN_CONFIG['seed']
    mask_mode: MaskMode = field(default_factory=MaskMode)
    checkpoint: Optional[str] = None
    levels: int = UNET_CONFIG['levels']
    base_filters: int = UNET_CONFIG['base_filters']

    def __post_init__(self):
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ValidationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError(f"Betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0, got {self.seed}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'TrainConfig':
        """Build from a JSON mapping; unknown keys are rejected"""
        known = {f.name for f in fields(cls)} | {'fill_value'}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"Unknown training config keys: {', '.join(unknown)}")
        values = dict(data)
        fill_value = values.pop('fill_value', TRAIN_CONFIG['fill_value'])
        mode = values.pop('mask_mode', TRAIN_CONFIG['mask_mode'])
        try:
            mask_mode = MaskMode.parse(str(mode), float(fill_value))
            for key in ('batch_size', 'epochs', 'seed', 'levels', 'base_filters'):
                if key in values:
                    if isinstance(values[key], bool) or int(values[key]) != values[key]:
                        raise ValidationError(f"{key} must be an integer, got {values[key]!r}")
                    values[key] = int(values[key])
            for key in ('learning_rate', 'beta1', 'beta2', 'epsilon'):
                if key in values:
                    values[key] = float(values[key])
        except (TypeError, ValueError) as e:
            if isinstance(e, ValidationError):
                raise
            raise ValidationError(f"Invalid training config value: {e}")
        return cls(mask_mode=mask_mode, **values)

    @classmethod
    def from_json(cls, path: PathLike) -> 'TrainConfig':
        text = Path(path).read_text(encoding='utf-8')
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise FormatError(f"Malformed training config {path}: {e.msg}", offset=e.pos)
        if not isinstance(data, dict):
            raise FormatError(f"Training config {path} must be a JSON object")
        return cls.from_dict(data)

    def unet_config(self) -> UNetConfig:
        return UNetConfig(in_channels=self.mask_mode.in_channels, out_channels=1,
                          levels=self.levels, base_filters=self.base_filters)


@dataclass
class AdamState:
    """First and second moments per parameter plus the step counter"""
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> 'AdamState':
        return cls(m=params.zeros_like().arrays, v=params.zeros_like().arrays, t=0)


def adam_step(params: ModelParams, grads: Mapping[str, Optional[np.ndarray]], state: AdamState,
              config: TrainConfig) -> Tuple[ModelParams, AdamState]:
    """
    One Adam update, applied in place

    Args:
        params: Parameters to update
        grads: Gradient per parameter name (None counts as zero)
        state: Moments and step counter
        config: Learning rate, betas and epsilon

    Returns:
        The updated params and state
    """
    for name in params:
        grad = grads.get(name)
        if grad is not None and np.shape(grad) != params[name].shape:
            raise ValidationError(f"Gradient for {name} has shape {np.shape(grad)}, expected {params[name].shape}")
        if state.m[name].shape != params[name].shape or state.v[name].shape != params[name].shape:
            raise ValidationError(f"Optimizer state for {name} does not match the parameter shape")

    state.t += 1
    b1, b2 = config.beta1, config.beta2
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t
    for name in params:
        grad = grads.get(name)
        g = np.zeros_like(params[name], dtype=np.float64) if grad is None else np.asarray(grad, dtype=np.float64)
        m = b1 * state.m[name].astype(np.float64) + (1.0 - b1) * g
        v = b2 * state.v[name].astype(np.float64) + (1.0 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        theta = params[name].astype(np.float64) - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
        state.m[name] = m.astype(np.float32)
        state.v[name] = v.astype(np.float32)
        params[name] = theta.astype(np.float32)
    return params, state


@dataclass
class MetricsReport:
    """Pixel metrics over mask-1 pixels; None where a ratio is undefined"""
    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    iou: Optional[float]
    true_positive: int
    false_positive: int
    false_negative: int
    true_negative: int
    masked_pixels: int
    total_pixels: int
    whole_accuracy: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    return numerator / denominator if denominator else None


def evaluate_masked(probs: np.ndarray, labels: np.ndarray, mask: np.ndarray,
                    threshold: float = INFERENCE_CONFIG['threshold'],
                    whole_probs: Optional[np.ndarray] = None) -> MetricsReport:
    """
    Threshold probabilities and score them against labels inside the mask

    A probability equal to the threshold counts as class 1. Whole-image
    accuracy ignores the mask and is scored on ``whole_probs`` when given
    (e.g. coated outputs), else on ``probs``.

    Args:
        probs: Probabilities (or 0/1 predictions)
        labels: Binary labels, same shape
        mask: Binary mask, same shape
        threshold: Decision threshold

    Returns:
        MetricsReport
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    mask = np.asarray(mask)
    if probs.shape != labels.shape or probs.shape != mask.shape:
        raise ValidationError(f"Shape mismatch: probs {probs.shape}, labels {labels.shape}, mask {mask.shape}")
    if np.any((mask != 0) & (mask != 1)):
        raise ValidationError("Mask values must be 0 or 1")

    predicted = probs >= threshold
    positive = labels == 1
    inside = mask == 1
    tp = int(np.count_nonzero(predicted & positive & inside))
    fp = int(np.count_nonzero(predicted & ~positive & inside))
    fn = int(np.count_nonzero(~predicted & positive & inside))
    tn = int(np.count_nonzero(~predicted & ~positive & inside))
    masked = int(np.count_nonzero(inside))

    whole = predicted if whole_probs is None else np.asarray(whole_probs) >= threshold
    return MetricsReport(
        accuracy=_ratio(tp + tn, masked),
        precision=_ratio(tp, tp + fp),
        recall=_ratio(tp, tp + fn),
        iou=_ratio(tp, tp + fp + fn),
        true_positive=tp,
        false_positive=fp,
        false_negative=fn,
        true_negative=tn,
        masked_pixels=masked,
        total_pixels=int(probs.size),
        whole_accuracy=_ratio(int(np.count_nonzero(whole == positive)), int(probs.size))
    )


def _stack(patches: Sequence[Patch]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    images = np.stack([p.image for p in patches])
    masks = np.stack([p.mask for p in patches])
    labels = np.stack([p.label for p in patches])
    return images, masks, labels


def _batches(items: Sequence[Any], size: int):
    for start in range(0, len(items), size):
        yield items[start:start + size]


def evaluate_model(cfg: UNetConfig, params: ModelParams, patches: Sequence[Patch], mask_mode: MaskMode,
                   threshold: float = INFERENCE_CONFIG['threshold'], batch_size: int = 4) -> MetricsReport:
    """
    Masked metrics of a model over a list of patches

    Whole-image accuracy is scored on the coated outputs.
    """
    if not patches:
        raise ValidationError("No patches to evaluate")
    probs, coated = [], []
    for batch in _batches(list(patches), batch_size):
        images, masks, _ = _stack(batch)
        x = build_model_input(images, masks, mask_mode)
        p = sigmoid(unet_forward(cfg, params.arrays, x))
        probs.append(p.data[:, 0])
        coated.append(coat_output(p, masks[:, np.newaxis]).data[:, 0])
    _, masks, labels = _stack(patches)
    return evaluate_masked(np.concatenate(probs), labels, masks, threshold, whole_probs=np.concatenate(coated))


@dataclass
class TrainResult:
    """Best parameters with the per-epoch history"""
    config: UNetConfig
    params: ModelParams
    mask_mode: MaskMode
    history: List[Dict[str, Any]]
    best_epoch: int
    best_val_accuracy: Optional[float]

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(self.config, self.params, str(self.mask_mode))


class Trainer:
    """Masked-loss U-Net training over the train split of a patch archive"""

    def __init__(self, config: TrainConfig, archive: PatchArchive):
        self.config = config
        self.archive = archive
        self.unet_config = config.unet_config()
        self.train_patches = archive.split('train')
        self.val_patches = archive.split('val')
        if not self.train_patches:
            raise ValidationError("Patch archive has no train patches")
        if archive.spec.size % self.unet_config.divisor:
            raise ValidationError(
                f"Patch size {archive.spec.size} is not divisible by {self.unet_config.divisor} "
                f"({self.unet_config.levels} levels)"
            )
        channels = self.train_patches[0].image.shape[0]
        if channels != 3:
            raise ValidationError(f"Archive imagery has {channels} channels, training expects 3 (RGB)")

    def _train_epoch(self, epoch: int, params: ModelParams, state: AdamState, bar: tqdm) -> float:
        order = SplitMix64(derive_seed(self.config.seed, epoch)).permutation(len(self.train_patches))
        losses = []
        for batch in _batches(order, self.config.batch_size):
            images, masks, labels = _stack([self.train_patches[i] for i in batch])
            x = build_model_input(images, masks, self.config.mask_mode)
            tensors = params.as_tensors()
            logits = unet_forward(self.unet_config, tensors, x)
            loss = masked_bce_with_logits(logits, labels[:, np.newaxis], masks[:, np.newaxis])
            loss.backward()
            adam_step(params, {name: t.grad for name, t in tensors.items()}, state, self.config)
            losses.append(float(loss.data))
            bar.update(1)
            bar.set_postfix(epoch=epoch, loss=f"{losses[-1]:.4f}")
        return float(np.mean(losses))

    def run(self) -> TrainResult:
        """
        Train for the configured epochs, keeping the best validation epoch

        Each epoch visits the train split in a splitmix64 order seeded by
        (seed, epoch). The retained parameters are those of the epoch with
        the highest validation masked accuracy (ties keep the earlier one);
        without validation accuracy the last epoch is kept.

        Returns:
            TrainResult
        """
        cfg = self.unet_config
        params = init_params(cfg, self.config.seed)
        state = AdamState.zeros(params)
        history: List[Dict[str, Any]] = []
        best_params, best_epoch, best_accuracy = params.copy(), 0, None

        batches = math.ceil(len(self.train_patches) / self.config.batch_size)
        logger.info(f"Training {cfg.levels}-level U-Net (base {cfg.base_filters}, mask mode "
                    f"{self.config.mask_mode}) on {len(self.train_patches)} patches for {self.config.epochs} epochs")
        with tqdm(total=batches * self.config.epochs, desc='train', file=sys.stderr,
                  disable=not progress_enabled()) as bar:
            for epoch in range(1, self.config.epochs + 1):
                train_loss = self._train_epoch(epoch, params, state, bar)
                val = None
                if self.val_patches:
                    val = evaluate_model(cfg, params, self.val_patches, self.config.mask_mode,
                                         batch_size=self.config.batch_size)
                record = {
                    'epoch': epoch,
                    'train_loss': train_loss,
                    'val_accuracy': val.accuracy if val else None,
                    'val_iou': val.iou if val else None
                }
                history.append(record)
                logger.info(f"Epoch {epoch}: loss {train_loss:.5f}, val accuracy {record['val_accuracy']}, "
                            f"val IoU {record['val_iou']}")

                accuracy = record['val_accuracy']
                if accuracy is not None and (best_accuracy is None or accuracy > best_accuracy):
                    best_params, best_epoch, best_accuracy = params.copy(), epoch, accuracy
                elif best_accuracy is None:
                    best_params, best_epoch = params.copy(), epoch

        logger.info(f"Kept epoch {best_epoch} (val accuracy {best_accuracy})")
        return TrainResult(cfg, best_params, self.config.mask_mode, history, best_epoch, best_accuracy)


def train(config: TrainConfig, archive: PatchArchive) -> TrainResult:
    """Train a U-Net on ``archive`` (see Trainer.run)"""
    return Trainer(config, archive).run()


def write_history(history: Sequence[Mapping[str, Any]], path: PathLike) -> None:
    """One JSON object per line: epoch, train_loss, val_accuracy, val_iou"""
    with open(path, 'w', encoding='utf-8') as f:
        for record in history:
            f.write(json.dumps(dict(record), sort_keys=True) + '\n')


def _tile_starts(dim: int, tile: int, stride: int) -> List[int]:
    if dim <= tile:
        return [0]
    starts = list(range(0, dim - tile + 1, stride))
    if starts[-1] + tile < dim:
        starts.append(dim - tile)
    return starts


def predict_tiled(checkpoint: Checkpoint, image: Raster, mask: Optional[Raster] = None,
                  tile: int = INFERENCE_CONFIG['tile'], tile_stride: int = INFERENCE_CONFIG['tile_stride'],
                  threshold: float = INFERENCE_CONFIG['threshold'], batch_size: int = 4) -> Tuple[Raster, Raster]:
    """
    Full-raster prediction by overlapping tiles

    Tile probabilities are summed with per-pixel counts in float64 and
    divided once at the end, so the result does not depend on tile order.
    The averaged probabilities are coated with the mask; pass ``mask=None``
    for an all-ones mask.

    Args:
        checkpoint: Model, parameters and the mask mode they were trained with
        image: 3-band u8 imagery
        mask: Binary validity mask on the image grid, or None
        tile: Tile size in pixels
        tile_stride: Offset between tile origins
        threshold: Decision threshold for the binary output

    Returns:
        (f32 probability raster, u8 binary raster)
    """
    cfg = checkpoint.config
    mode = MaskMode.parse(checkpoint.mask_mode)
    if cfg.in_channels != mode.in_channels:
        raise ValidationError(f"Model expects {cfg.in_channels} input channels but mask mode {mode} gives "
                              f"{mode.in_channels}")
    if image.bands != 3 or image.dtype != 'u8':
        raise ValidationError("Image must be a 3-band u8 raster")
    if mask is None:
        mask = Raster.zeros(image.grid)
        mask.data[...] = 1
    require_same_grid(image, mask)
    require_binary(mask, 'mask')
    if tile < 1 or tile % cfg.divisor:
        raise ValidationError(f"Tile size {tile} must be a positive multiple of {cfg.divisor}")
    if not 1 <= tile_stride <= tile:
        raise ValidationError(f"Tile stride must lie in [1, {tile}], got {tile_stride}")

    height, width = image.grid.height, image.grid.width
    windows = [(r, c) for r in _tile_starts(height, tile, tile_stride) for c in _tile_starts(width, tile, tile_stride)]
    total = np.zeros((height, width), dtype=np.float64)
    count = np.zeros((height, width), dtype=np.int64)

    with tqdm(total=len(windows), desc='predict', file=sys.stderr, disable=not progress_enabled()) as bar:
        for batch in _batches(windows, batch_size):
            images = np.stack([crop_window(image.data, r, c, tile).astype(np.float32) / np.float32(255.0)
                               for r, c in batch])
            masks = np.stack([crop_window(mask.data, r, c, tile)[0] for r, c in batch])
            probs = sigmoid(unet_forward(cfg, checkpoint.params.arrays, build_model_input(images, masks, mode))).data
            for (row0, col0), p in zip(batch, probs[:, 0]):
                rows = min(tile, height - row0)
                cols = min(tile, width - col0)
                total[row0:row0 + rows, col0:col0 + cols] += p[:rows, :cols]
                count[row0:row0 + rows, col0:col0 + cols] += 1
            bar.update(len(batch))

    averaged = (total / count).astype(np.float32)
    coated = coat_output(averaged[np.newaxis, np.newaxis], mask.data[np.newaxis]).data[0, 0].astype(np.float32)
    binary = ((coated >= threshold) & (mask.data[0] == 1)).astype(np.uint8)
    logger.info(f"Predicted {len(windows)} tiles over {width}x{height}; "
                f"{int(binary.sum())} pixels above {threshold:g}")
    return Raster(image.grid, coated[np.newaxis]), Raster(image.grid, binary[np.newaxis])
