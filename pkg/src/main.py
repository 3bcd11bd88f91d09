"""
Command-line Interface for the Road-Mask Tree Mapping Toolkit

Wires the pipeline stages into batch subcommands. Diagnostics go to
standard error; machine-readable results go to files or standard output.
"""

import json
import logging
import sys
from pathlib import Path
from typing import Callable, List, Optional, Sequence, TypeVar

import click

from config.settings import GEODATA_CONFIG, INFERENCE_CONFIG, LOG_FORMAT, LOG_LEVEL, MASK_CONFIG, PATCH_CONFIG
from src.exceptions import ToolkitError, ValidationError
from src.geodata import (
    GeoBBox,
    LocalProjection,
    OverpassClient,
    dump_geojson,
    parse_geojson,
    parse_overpass_response,
    with_link_variants,
)
from src.maskgen import BufferSpec, rasterize_buffered_polylines, rasterize_polygons
from src.patches import PatchSpec, archive_read, archive_write, extract_patches, split_assign
from src.pipeline import TrainConfig, evaluate_masked, evaluate_model, predict_tiled, train, write_history
from src.raster import GridTransform, export_preview, require_same_grid, rras_read, rras_write
from src.synthetic import generate_synthetic_scene
from src.unet import checkpoint_read, checkpoint_write

logger = logging.getLogger(__name__)

T = TypeVar('T')

CONTEXT_SETTINGS = {'show_default': True, 'help_option_names': ['-h', '--help']}
FILE = click.Path(dir_okay=False)


def _split_list(text: str, convert: Callable[[str], T], name: str) -> List[T]:
    try:
        return [convert(part.strip()) for part in text.split(',') if part.strip()]
    except ValueError:
        raise click.BadParameter(f"expected a comma-separated list, got {text!r}", param_hint=name)


def _resolve_grid(like: Optional[str], grid: Optional[str]) -> GridTransform:
    if (like is None) == (grid is None):
        raise click.UsageError("Exactly one of --like or --grid is required")
    if like is not None:
        return rras_read(like).grid
    return GridTransform.load(grid)


def _binary_path(out: str) -> Path:
    path = Path(out)
    return path.with_name(f"{path.stem}_binary{path.suffix or '.rras'}")


@click.group(context_settings=CONTEXT_SETTINGS)
def cli():
    """Tree crown mapping with road-mask supervision."""


@cli.command('fetch-roads')
@click.option('--bbox', required=True, help='Extent as S,W,N,E in degrees')
@click.option('--out', required=True, type=FILE, help='Output GeoJSON of projected centerlines')
@click.option('--endpoint', default=None, help='Overpass interpreter URL (default: OVERPASS_ENDPOINT)')
@click.option('--classes', default=None, help='Highway classes, comma-separated (default: main drivable roads)')
@click.option('--proj', default=None, help='Projection origin lon0,lat0 (default: bbox center)')
@click.option('--link-roads', is_flag=True, help='Also fetch <class>_link ways')
@click.option('--timeout', type=float, default=None, help='Request timeout in seconds')
def fetch_roads_command(bbox, out, endpoint, classes, proj, link_roads, timeout):
    """Download road centerlines from the Overpass API."""
    extent = GeoBBox.parse(bbox)
    projection = LocalProjection.parse(proj) if proj else LocalProjection(*extent.center())
    class_list = _split_list(classes, str, '--classes') if classes else None
    if link_roads:
        class_list = with_link_variants(class_list or GEODATA_CONFIG['highway_classes'])
    payload = OverpassClient(endpoint, timeout).fetch_roads(extent, class_list)
    features = parse_overpass_response(payload, projection)
    Path(out).write_text(dump_geojson(features), encoding='utf-8')
    logger.info(f"Wrote {len(features.polylines)} road polylines to {out} "
                f"(origin {projection.lon0:.7f},{projection.lat0:.7f})")


@cli.command('build-mask')
@click.option('--roads', required=True, type=FILE, help='Road centerline GeoJSON (local meters)')
@click.option('--like', default=None, type=FILE, help='Raster whose grid the mask uses')
@click.option('--grid', default=None, type=FILE, help='Grid JSON, alternative to --like')
@click.option('--buffer', 'radius', type=float, default=MASK_CONFIG['buffer_radius'], help='Buffer radius in meters')
@click.option('--out', required=True, type=FILE, help='Output mask raster')
def build_mask_command(roads, like, grid, radius, out):
    """Burn the buffered road network into a validity mask."""
    target = _resolve_grid(like, grid)
    features = parse_geojson(Path(roads).read_text(encoding='utf-8'))
    rras_write(rasterize_buffered_polylines(features.polylines, target, BufferSpec(radius)), out)


@cli.command('rasterize-labels')
@click.option('--crowns', required=True, type=FILE, help='Crown polygon GeoJSON (local meters)')
@click.option('--like', default=None, type=FILE, help='Raster whose grid the labels use')
@click.option('--grid', default=None, type=FILE, help='Grid JSON, alternative to --like')
@click.option('--out', required=True, type=FILE, help='Output label raster')
def rasterize_labels_command(crowns, like, grid, out):
    """Burn crown polygons into a label raster."""
    target = _resolve_grid(like, grid)
    features = parse_geojson(Path(crowns).read_text(encoding='utf-8'))
    rras_write(rasterize_polygons(features.polygons, target), out)


@cli.command('extract-patches')
@click.option('--image', required=True, type=FILE, help='3-band u8 image raster')
@click.option('--mask', required=True, type=FILE, help='Validity mask raster')
@click.option('--labels', required=True, type=FILE, help='Crown label raster')
@click.option('--size', type=int, default=PATCH_CONFIG['size'], help='Patch size in pixels')
@click.option('--stride', type=int, default=PATCH_CONFIG['stride'], help='Window stride in pixels')
@click.option('--seed', type=int, default=PATCH_CONFIG['seed'], help='Split seed')
@click.option('--fractions', default=','.join(f"{f:g}" for f in PATCH_CONFIG['fractions']),
              help='Train,val,test fractions')
@click.option('--out', required=True, type=FILE, help='Output MKPATCH1 archive')
def extract_patches_command(image, mask, labels, size, stride, seed, fractions, out):
    """Cut aligned rasters into split-tagged training patches."""
    spec = PatchSpec(size, stride)
    image_raster = rras_read(image)
    patches = extract_patches(image_raster, rras_read(mask), rras_read(labels), spec)
    assignment = split_assign(len(patches), _split_list(fractions, float, '--fractions'), seed)
    archive_write(patches, assignment, out, spec, image_raster.grid)


@cli.command('train')
@click.option('--patches', required=True, type=FILE, help='MKPATCH1 archive')
@click.option('--config', 'config_path', required=True, type=FILE, help='Training config JSON')
@click.option('--out', default=None, type=FILE, help='Output MKCKPT01 checkpoint (default: config "checkpoint")')
@click.option('--history', required=True, type=FILE, help='Output JSON lines history')
def train_command(patches, config_path, out, history):
    """Train the masked-loss U-Net."""
    config = TrainConfig.from_json(config_path)
    out = out or config.checkpoint
    if not out:
        raise click.UsageError("--out is required when the config has no checkpoint path")
    archive = archive_read(patches)
    result = train(config, archive)
    checkpoint_write(result.params, result.config, out, str(result.mask_mode))
    write_history(result.history, history)
    test_patches = archive.split('test')
    if test_patches:
        report = evaluate_model(result.config, result.params, test_patches, result.mask_mode,
                                batch_size=config.batch_size)
        logger.info(f"Test split: masked accuracy {report.accuracy}, IoU {report.iou}, "
                    f"whole accuracy {report.whole_accuracy}")


@cli.command('predict')
@click.option('--model', required=True, type=FILE, help='MKCKPT01 checkpoint')
@click.option('--image', required=True, type=FILE, help='3-band u8 image raster')
@click.option('--mask', default=None, type=FILE, help='Validity mask raster')
@click.option('--ones', is_flag=True, help='Predict everywhere (all-ones mask)')
@click.option('--out', required=True, type=FILE, help='Output f32 probability raster; the binary '
                                                      'raster goes to <out>_binary')
@click.option('--threshold', type=float, default=INFERENCE_CONFIG['threshold'], help='Decision threshold')
@click.option('--tile', type=int, default=INFERENCE_CONFIG['tile'], help='Tile size in pixels')
@click.option('--tile-stride', type=int, default=INFERENCE_CONFIG['tile_stride'], help='Tile stride in pixels')
def predict_command(model, image, mask, ones, out, threshold, tile, tile_stride):
    """Predict crowns over a full raster by overlapping tiles."""
    if (mask is None) == (not ones):
        raise click.UsageError("Exactly one of --mask or --ones is required")
    checkpoint = checkpoint_read(model)
    mask_raster = None if ones else rras_read(mask)
    probs, binary = predict_tiled(checkpoint, rras_read(image), mask_raster, tile, tile_stride, threshold)
    rras_write(probs, out)
    rras_write(binary, _binary_path(out))


@cli.command('evaluate')
@click.option('--pred', required=True, type=FILE, help='Probability (f32) or binary (u8) prediction raster')
@click.option('--labels', required=True, type=FILE, help='Crown label raster')
@click.option('--mask', required=True, type=FILE, help='Validity mask raster')
@click.option('--threshold', type=float, default=INFERENCE_CONFIG['threshold'], help='Decision threshold')
def evaluate_command(pred, labels, mask, threshold):
    """Print masked metrics as JSON."""
    rasters = [rras_read(path) for path in (pred, labels, mask)]
    for raster, name in zip(rasters, ('pred', 'labels', 'mask')):
        if raster.bands != 1:
            raise ValidationError(f"--{name} must be a single-band raster, got {raster.bands} bands")
    require_same_grid(*rasters)
    report = evaluate_masked(rasters[0].data[0], rasters[1].data[0], rasters[2].data[0], threshold)
    click.echo(json.dumps(report.to_dict(), sort_keys=True, indent=2))


@cli.command('synth')
@click.option('--seed', type=int, default=0, help='Scene seed')
@click.option('--width', type=int, default=512, help='Columns')
@click.option('--height', type=int, default=512, help='Rows')
@click.option('--trees', type=int, default=60, help='Number of trees')
@click.option('--roads', type=int, default=6, help='Number of roads')
@click.option('--out-dir', required=True, type=click.Path(file_okay=False), help='Output directory')
def synth_command(seed, width, height, trees, roads, out_dir):
    """Write a synthetic scene: image.rras, roads.geojson, crowns.geojson, grid.json."""
    scene = generate_synthetic_scene(seed, width, height, trees, roads)
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    rras_write(scene.image, directory / 'image.rras')
    (directory / 'roads.geojson').write_text(dump_geojson(scene.road_features()), encoding='utf-8')
    (directory / 'crowns.geojson').write_text(dump_geojson(scene.crown_features()), encoding='utf-8')
    (directory / 'grid.json').write_text(json.dumps(scene.grid.to_dict(), sort_keys=True), encoding='utf-8')


@cli.command('export-ppm')
@click.option('--in', 'source', required=True, type=FILE, help='Input raster')
@click.option('--out', required=True, type=FILE, help='Output PGM/PPM')
@click.option('--bands', default=None, help='Band indices i or i,j,k (default: first 1 or 3 bands)')
@click.option('--scale', type=float, default=None, help='Multiplier for u8 samples (default: 255 for binary)')
def export_ppm_command(source, out, bands, scale):
    """Write a PGM/PPM preview of a raster."""
    raster = rras_read(source)
    indices = _split_list(bands, int, '--bands') if bands else None
    if scale is None and raster.is_binary():
        scale = 255.0
    export_preview(raster, out, indices, scale)


def _configure_logging() -> None:
    logging.basicConfig(level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
                        format=LOG_FORMAT, stream=sys.stderr)


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one CLI invocation and return its exit code

    0 success, 1 usage error, 2 I/O or format error, 3 network error,
    4 validation error.
    """
    _configure_logging()
    try:
        result = cli.main(args=list(argv) if argv is not None else None,
                          prog_name='treemap', standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        click.echo('Aborted.', err=True)
        return 1
    except ToolkitError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return 2
    return result if isinstance(result, int) else 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
