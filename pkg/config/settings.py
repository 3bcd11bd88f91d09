"""
Project Settings for the Road-Mask Tree Mapping Toolkit
"""

import os
import sys
from typing import Dict, Any

from dotenv import load_dotenv

load_dotenv()

# Environment settings
ENVIRONMENT = os.getenv('ENVIRONMENT', 'development')
DEBUG = os.getenv('DEBUG', 'False').lower() == 'true'

# Logging settings
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Progress bars go to stderr; off unless stderr is a terminal
PROGRESS = os.getenv('PROGRESS', 'auto').lower()

# Geodata settings
GEODATA_CONFIG = {
    'earth_radius': 6378137.0,
    'highway_classes': [
        'motorway',
        'trunk',
        'primary',
        'secondary',
        'tertiary',
        'unclassified',
        'residential'
    ],
    'link_classes': ['motorway', 'trunk', 'primary', 'secondary', 'tertiary'],
    'overpass_timeout': 60,
    'coordinate_decimals': 7
}

# Raster settings
RASTER_CONFIG = {
    'pixel_size': 0.2,  # meters per pixel
    'dtypes': ['u8', 'f32']
}

# Road mask settings
MASK_CONFIG = {
    'buffer_radius': 5.0  # meters on each side of the centerline
}

# Patch extraction settings
PATCH_CONFIG = {
    'size': 256,
    'stride': 128,
    'fractions': (0.6, 0.2, 0.2),
    'seed': 0
}

# U-Net settings
UNET_CONFIG = {
    'in_channels': 4,
    'out_channels': 1,
    'levels': 4,
    'base_filters': 32
}

# Training settings
TRAIN_CONFIG = {
    'learning_rate': 1e-3,
    'beta1': 0.9,
    'beta2': 0.999,
    'epsilon': 1e-8,
    'batch_size': 4,
    'epochs': 20,
    'seed': 0,
    'mask_mode': 'channel',
    'fill_value': 0.0
}

# Inference settings
INFERENCE_CONFIG = {
    'tile': 256,
    'tile_stride': 128,
    'threshold': 0.5
}

# Synthetic scene settings (RGB values are u8, sizes in pixels)
SYNTHETIC_CONFIG = {
    'pixel_size': 0.2,
    'background_rgb': (105, 125, 95),
    'background_noise': 18,
    'road_rgb': (70, 70, 74),
    'road_noise': 8,
    'road_width': (4.0, 8.0),
    'tree_rgb': (30, 150, 35),
    'tree_noise': 12,
    'tree_radius': (4.0, 10.0),
    'tree_road_distance': 25.0,
    'crown_vertices': 16
}


def get_config() -> Dict[str, Any]:
    """Get complete configuration dictionary"""
    return {
        'environment': ENVIRONMENT,
        'debug': DEBUG,
        'geodata': GEODATA_CONFIG,
        'raster': RASTER_CONFIG,
        'mask': MASK_CONFIG,
        'patches': PATCH_CONFIG,
        'unet': UNET_CONFIG,
        'training': TRAIN_CONFIG,
        'inference': INFERENCE_CONFIG,
        'synthetic': SYNTHETIC_CONFIG
    }


def get_geodata_config() -> Dict[str, Any]:
    """Get geodata configuration"""
    return GEODATA_CONFIG


def get_patch_config() -> Dict[str, Any]:
    """Get patch extraction configuration"""
    return PATCH_CONFIG


def get_unet_config() -> Dict[str, Any]:
    """Get U-Net shape configuration"""
    return UNET_CONFIG


def get_train_config() -> Dict[str, Any]:
    """Get training configuration"""
    return TRAIN_CONFIG


def get_inference_config() -> Dict[str, Any]:
    """Get tiled inference configuration"""
    return INFERENCE_CONFIG


def get_synthetic_config() -> Dict[str, Any]:
    """Get synthetic scene configuration"""
    return SYNTHETIC_CONFIG


def progress_enabled() -> bool:
    """Whether tqdm progress bars should be drawn"""
    if PROGRESS in ('true', '1', 'yes'):
        return True
    if PROGRESS in ('false', '0', 'no'):
        return False
    return sys.stderr.isatty()
