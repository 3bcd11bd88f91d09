"""
Road-Mask Tree Mapping Toolkit

Tree crown segmentation from aerial imagery where labels are trusted only
near the road network: a masked-loss U-Net with mask coating at inference.
"""

__version__ = "1.0.0"
__author__ = "Tree Mapping Team"
__description__ = "Masked-loss U-Net tree crown mapping along road networks"

from .geodata import FeatureSet, OverpassClient, parse_geojson, parse_overpass_response
from .raster import GridTransform, Raster, rras_read, rras_write
from .maskgen import rasterize_buffered_polylines, rasterize_polygons
from .patches import PatchSpec, archive_read, archive_write, extract_patches, split_assign
from .unet import UNetConfig, checkpoint_read, checkpoint_write
from .pipeline import TrainConfig, Trainer, evaluate_masked, predict_tiled, train
from .synthetic import generate_synthetic_scene

__all__ = [
    'FeatureSet',
    'OverpassClient',
    'parse_geojson',
    'parse_overpass_response',
    'GridTransform',
    'Raster',
    'rras_read',
    'rras_write',
    'rasterize_buffered_polylines',
    'rasterize_polygons',
    'PatchSpec',
    'archive_read',
    'archive_write',
    'extract_patches',
    'split_assign',
    'UNetConfig',
    'checkpoint_read',
    'checkpoint_write',
    'TrainConfig',
    'Trainer',
    'evaluate_masked',
    'predict_tiled',
    'train',
    'generate_synthetic_scene'
]
