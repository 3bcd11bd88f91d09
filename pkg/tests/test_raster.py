"""
Unit Tests for the pixel grid, the RRAS container and previews
"""

import os
import struct
import tempfile
import unittest

import numpy as np
from PIL import Image

from src.exceptions import BoundsError, FormatError, ValidationError
from src.geodata import Point2
from src.raster import (
    GridTransform,
    Raster,
    export_preview,
    pixel_center,
    rras_read,
    rras_write,
    world_to_pixel,
)
from src.rng import SplitMix64


class TestGridTransform(unittest.TestCase):
    """Test cases for the north-up grid"""

    def test_invariants(self):
        with self.assertRaises(ValidationError):
            GridTransform(0.0, 0.0, 0.0, 4, 4)
        with self.assertRaises(ValidationError):
            GridTransform(0.0, 0.0, 1.0, 0, 4)

    def test_rotation_rejected(self):
        data = {'origin_x': 0, 'origin_y': 0, 'pixel_size': 1, 'width': 2, 'height': 2, 'rotation_x': 0.1}
        with self.assertRaises(ValidationError):
            GridTransform.from_dict(data)
        data['rotation_x'] = 0
        self.assertEqual(GridTransform.from_dict(data), GridTransform(0.0, 0.0, 1.0, 2, 2))

    def test_pixel_center(self):
        self.assertEqual(pixel_center(GridTransform(0.0, 0.0, 1.0, 2, 2), 0, 0), Point2(0.5, -0.5))
        center = pixel_center(GridTransform(100.0, 200.0, 0.2, 10, 10), 0, 0)
        self.assertAlmostEqual(center.x, 100.1)
        self.assertAlmostEqual(center.y, 199.9)

    def test_pixel_center_bounds(self):
        with self.assertRaises(BoundsError):
            pixel_center(GridTransform(0.0, 0.0, 1.0, 2, 2), 2, 0)
        with self.assertRaises(IndexError):
            pixel_center(GridTransform(0.0, 0.0, 1.0, 2, 2), 0, -1)

    def test_world_to_pixel(self):
        grid = GridTransform(0.0, 0.0, 1.0, 2, 2)
        self.assertEqual(world_to_pixel(grid, Point2(0.5, -0.5)), (0, 0))
        self.assertIsNone(world_to_pixel(grid, Point2(2.5, -0.5)))
        self.assertEqual(world_to_pixel(grid, Point2(0.0, -1.5)), (1, 0))

    def test_center_round_trip(self):
        rng = SplitMix64(3)
        for _ in range(20):
            grid = GridTransform(rng.uniform_range(-1e4, 1e4), rng.uniform_range(-1e4, 1e4),
                                 rng.uniform_range(0.05, 3.0), 1 + rng.below(30), 1 + rng.below(30))
            for row in range(grid.height):
                for col in range(grid.width):
                    self.assertEqual(world_to_pixel(grid, pixel_center(grid, row, col)), (row, col))

    def test_vectorised_centers_match(self):
        grid = GridTransform(12.3, 45.6, 0.2, 7, 5)
        xs, ys = grid.pixel_centers()
        for row in range(grid.height):
            for col in range(grid.width):
                center = pixel_center(grid, row, col)
                self.assertEqual(xs[col], center.x)
                self.assertEqual(ys[row], center.y)


class TestRasterContainer(unittest.TestCase):
    """Test cases for RRAS read/write"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, 'r.rras')

    def tearDown(self):
        self.tmp.cleanup()

    def test_single_pixel_layout(self):
        raster = Raster(GridTransform(0.0, 0.0, 1.0, 1, 1), np.array([[[7]]], dtype=np.uint8))
        rras_write(raster, self.path)
        with open(self.path, 'rb') as f:
            blob = f.read()
        self.assertEqual(blob[:8], b'RRASTER1')
        (length,) = struct.unpack('<I', blob[8:12])
        self.assertEqual(len(blob), 8 + 4 + length + 1)
        self.assertEqual(blob[-1], 7)
        back = rras_read(self.path)
        self.assertEqual(back.grid, raster.grid)
        self.assertTrue(np.array_equal(back.data, raster.data))

    def test_f32_payload_little_endian(self):
        values = np.array([[[1.5, -2.0], [0.25, 3.0e7]]], dtype=np.float32)
        rras_write(Raster(GridTransform(0.0, 0.0, 1.0, 2, 2), values), self.path)
        with open(self.path, 'rb') as f:
            blob = f.read()
        self.assertEqual(blob[-16:], values.astype('<f4').tobytes())

    def test_random_round_trips(self):
        rng = SplitMix64(11)
        for i in range(12):
            grid = GridTransform(rng.uniform_range(-100, 100), rng.uniform_range(-100, 100),
                                 rng.uniform_range(0.1, 2.0), 1 + rng.below(20), 1 + rng.below(20))
            bands = 1 + rng.below(4)
            count = bands * grid.height * grid.width
            if i % 2:
                data = (rng.next_array(count) % np.uint64(256)).astype(np.uint8)
            else:
                data = rng.next_array(count).astype(np.uint32).view(np.float32)
            raster = Raster(grid, data.reshape(bands, grid.height, grid.width))
            rras_write(raster, self.path)
            back = rras_read(self.path)
            self.assertEqual(back.grid, grid)
            self.assertEqual(back.data.dtype, raster.data.dtype)
            self.assertEqual(back.data.tobytes(), raster.data.tobytes())

    def test_bad_magic(self):
        rras_write(Raster.zeros(GridTransform(0.0, 0.0, 1.0, 2, 2)), self.path)
        with open(self.path, 'r+b') as f:
            f.write(b'RRASTER9')
        with self.assertRaises(FormatError):
            rras_read(self.path)

    def test_truncated_payload(self):
        rras_write(Raster.zeros(GridTransform(0.0, 0.0, 1.0, 4, 4)), self.path)
        with open(self.path, 'rb') as f:
            blob = f.read()
        with open(self.path, 'wb') as f:
            f.write(blob[:-3])
        with self.assertRaises(FormatError) as ctx:
            rras_read(self.path)
        self.assertEqual(ctx.exception.exit_code, 2)

    def test_unknown_dtype(self):
        header = b'{"bands":1,"dtype":"i16","height":1,"origin_x":0,"origin_y":0,"pixel_size":1,"width":1}'
        with open(self.path, 'wb') as f:
            f.write(b'RRASTER1' + struct.pack('<I', len(header)) + header + b'\x00\x00')
        with self.assertRaises(FormatError):
            rras_read(self.path)


class TestPreview(unittest.TestCase):
    """Test cases for PGM/PPM previews"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.grid = GridTransform(0.0, 0.0, 1.0, 2, 2)

    def tearDown(self):
        self.tmp.cleanup()

    def _load(self, name):
        path = os.path.join(self.tmp.name, name)
        with open(path, 'rb') as f:
            magic = f.read(2)
        with Image.open(path) as image:
            return magic, np.array(image)

    def test_binary_mask_scaled(self):
        raster = Raster(self.grid, np.array([[[0, 1], [1, 0]]], dtype=np.uint8))
        export_preview(raster, os.path.join(self.tmp.name, 'm.pgm'), scale=255)
        magic, pixels = self._load('m.pgm')
        self.assertEqual(magic, b'P5')
        self.assertEqual(pixels.tolist(), [[0, 255], [255, 0]])

    def test_rgb_interleaved(self):
        data = np.arange(12, dtype=np.uint8).reshape(3, 2, 2)
        export_preview(Raster(self.grid, data), os.path.join(self.tmp.name, 'rgb.ppm'))
        magic, pixels = self._load('rgb.ppm')
        self.assertEqual(magic, b'P6')
        self.assertTrue(np.array_equal(pixels, data.transpose(1, 2, 0)))

    def test_constant_f32_is_zero(self):
        raster = Raster(self.grid, np.full((1, 2, 2), 0.7, dtype=np.float32))
        export_preview(raster, os.path.join(self.tmp.name, 'c.pgm'))
        _, pixels = self._load('c.pgm')
        self.assertTrue(np.all(pixels == 0))

    def test_f32_scaled_to_full_range(self):
        raster = Raster(self.grid, np.array([[[-1.0, 0.0], [0.5, 1.0]]], dtype=np.float32))
        export_preview(raster, os.path.join(self.tmp.name, 'f.pgm'))
        _, pixels = self._load('f.pgm')
        self.assertEqual(pixels.tolist(), [[0, 128], [191, 255]])

    def test_f32_nan_maps_to_zero(self):
        raster = Raster(self.grid, np.array([[[np.nan, 0.0], [0.5, 1.0]]], dtype=np.float32))
        export_preview(raster, os.path.join(self.tmp.name, 'n.pgm'))
        _, pixels = self._load('n.pgm')
        self.assertEqual(pixels.tolist(), [[0, 0], [128, 255]])

        raster = Raster(self.grid, np.full((1, 2, 2), np.nan, dtype=np.float32))
        export_preview(raster, os.path.join(self.tmp.name, 'all.pgm'))
        _, pixels = self._load('all.pgm')
        self.assertTrue(np.all(pixels == 0))

    def test_band_out_of_range(self):
        with self.assertRaises(BoundsError):
            export_preview(Raster.zeros(self.grid), os.path.join(self.tmp.name, 'x.pgm'), bands=[1])
        with self.assertRaises(ValidationError):
            export_preview(Raster.zeros(self.grid, bands=3), os.path.join(self.tmp.name, 'x.pgm'), bands=[0, 1])


if __name__ == '__main__':
    unittest.main()
