"""
Unit Tests for geometry parsing, projection and the Overpass client
"""

import json
import math
import os
import unittest
from unittest.mock import Mock, patch

import requests

from src.exceptions import FormatError, NetworkError, NetworkTimeoutError, RateLimitError, ValidationError
from src.geodata import (
    FeatureSet,
    GeoBBox,
    LocalProjection,
    OverpassClient,
    Point2,
    Polygon,
    Polyline,
    build_overpass_query,
    dump_geojson,
    parse_geojson,
    parse_overpass_response,
    project_wgs84_local,
    unproject_local_wgs84,
    with_link_variants,
)
from src.rng import SplitMix64

FIXTURES = os.path.join(os.path.dirname(__file__), 'fixtures')
DEGREE = 6378137.0 * math.pi / 180.0


def _fixture(name: str) -> bytes:
    with open(os.path.join(FIXTURES, name), 'rb') as f:
        return f.read()


def _response(status: int, content: bytes, headers=None) -> Mock:
    response = Mock()
    response.status_code = status
    response.content = content
    response.headers = headers or {}
    return response


class TestGeometryTypes(unittest.TestCase):
    """Test cases for the geometry invariants"""

    def test_point_rejects_non_finite(self):
        with self.assertRaises(ValidationError):
            Point2(float('nan'), 0.0)

    def test_polyline_needs_positive_segment(self):
        with self.assertRaises(ValidationError):
            Polyline((Point2(0, 0),))
        with self.assertRaises(ValidationError):
            Polyline((Point2(1, 1), Point2(1, 1)))
        line = Polyline((Point2(1, 1), Point2(1, 1), Point2(2, 1)))
        self.assertEqual(len(list(line.segments())), 2)

    def test_polygon_ring_needs_three_distinct_vertices(self):
        with self.assertRaises(ValidationError):
            Polygon((Point2(0, 0), Point2(1, 0), Point2(0, 0)))

    def test_bbox_parse_and_center(self):
        bbox = GeoBBox.parse('53.5,9.9,53.6,10.0')
        self.assertEqual((bbox.south, bbox.west, bbox.north, bbox.east), (53.5, 9.9, 53.6, 10.0))
        lon, lat = bbox.center()
        self.assertAlmostEqual(lon, 9.95)
        self.assertAlmostEqual(lat, 53.55)
        with self.assertRaises(ValidationError):
            GeoBBox.parse('53.6,9.9,53.5,10.0')
        with self.assertRaises(ValidationError):
            GeoBBox.parse('53.5,9.9,53.6')

    def test_projection_rejects_pole(self):
        with self.assertRaises(ValidationError):
            LocalProjection(0.0, 90.0)


class TestGeoJSON(unittest.TestCase):
    """Test cases for GeoJSON parsing"""

    def test_linestring_collection(self):
        text = json.dumps({'type': 'FeatureCollection', 'features': [{
            'type': 'Feature', 'properties': {},
            'geometry': {'type': 'LineString', 'coordinates': [[0, 0], [1, 0], [2, 1]]}
        }]})
        features = parse_geojson(text)
        self.assertEqual(len(features.polylines), 1)
        self.assertEqual(len(features.polygons), 0)
        self.assertEqual(features.polylines[0].vertices[2], Point2(2.0, 1.0))

    def test_multilinestring_parts(self):
        text = json.dumps({'type': 'MultiLineString', 'coordinates': [[[0, 0], [1, 0]], [[0, 1], [1, 1]]]})
        self.assertEqual(len(parse_geojson(text).polylines), 2)

    def test_polygon_with_hole(self):
        outer = [[0, 0], [10, 0], [10, 10], [0, 10], [0, 0]]
        hole = [[2, 2], [4, 2], [4, 4], [2, 2]]
        features = parse_geojson(json.dumps({'type': 'Feature', 'geometry': {'type': 'Polygon', 'coordinates': [outer, hole]}}))
        self.assertEqual(len(features.polygons), 1)
        polygon = features.polygons[0]
        self.assertEqual(len(polygon.holes), 1)
        # closing vertex dropped
        self.assertEqual(len(polygon.outer), 4)
        self.assertEqual(len(polygon.holes[0]), 3)

    def test_multipolygon_parts(self):
        square = [[[0, 0], [1, 0], [1, 1], [0, 1]]]
        text = json.dumps({'type': 'MultiPolygon', 'coordinates': [square, square]})
        self.assertEqual(len(parse_geojson(text).polygons), 2)

    def test_unsupported_geometry_is_counted(self):
        text = json.dumps({'type': 'FeatureCollection', 'features': [
            {'type': 'Feature', 'geometry': {'type': 'Point', 'coordinates': [0, 0]}},
            {'type': 'Feature', 'geometry': {'type': 'LineString', 'coordinates': [[0, 0], [1, 1]]}}
        ]})
        features = parse_geojson(text)
        self.assertEqual(features.skipped, 1)
        self.assertEqual(len(features.polylines), 1)

    def test_invalid_geometry_names_feature(self):
        text = json.dumps({'type': 'FeatureCollection', 'features': [
            {'type': 'Feature', 'geometry': {'type': 'LineString', 'coordinates': [[0, 0], [1, 1]]}},
            {'type': 'Feature', 'geometry': {'type': 'LineString', 'coordinates': [[0, 0]]}}
        ]})
        with self.assertRaises(ValidationError) as ctx:
            parse_geojson(text)
        self.assertIn('Feature 1', str(ctx.exception))

    def test_feature_prefix_appears_once(self):
        for geometry in ({'type': 'LineString', 'coordinates': [[0, 0], ['x', 1]]},
                         {'type': 'LineString', 'coordinates': [[0, 0]]},
                         {'type': 'Polygon', 'coordinates': [[[0, 0], [1, 0], [None, 1], [0, 0]]]},
                         {'type': 'Polygon', 'coordinates': [[[0, 0], [1, 0], [0, 0]]]}):
            text = json.dumps({'type': 'FeatureCollection', 'features': [
                {'type': 'Feature', 'geometry': {'type': 'LineString', 'coordinates': [[0, 0], [1, 1]]}},
                {'type': 'Feature', 'geometry': {'type': 'LineString', 'coordinates': [[2, 2], [3, 3]]}},
                {'type': 'Feature', 'geometry': geometry}
            ]})
            with self.assertRaises(ValidationError) as ctx:
                parse_geojson(text)
            self.assertEqual(str(ctx.exception).count('Feature 2:'), 1, str(ctx.exception))

    def test_malformed_json_reports_offset(self):
        with self.assertRaises(FormatError) as ctx:
            parse_geojson('{"type": "LineString", "coordinates": [[0, 0], [1, 1]')
        self.assertIsNotNone(ctx.exception.offset)

    def test_dump_then_parse_preserves_geometry(self):
        line = Polyline((Point2(0.5, 1.25), Point2(3.0, -2.0)))
        polygon = Polygon((Point2(0.0, 0.0), Point2(4.0, 0.0), Point2(4.0, 4.0)),
                          ((Point2(1.0, 1.0), Point2(2.0, 1.0), Point2(2.0, 1.5)),))
        text = dump_geojson(FeatureSet(polylines=[line], polygons=[polygon]))
        parsed = parse_geojson(text)
        self.assertEqual(parsed.polylines, [line])
        self.assertEqual(parsed.polygons, [polygon])
        self.assertEqual(text, dump_geojson(parsed))


class TestProjection(unittest.TestCase):
    """Test cases for the local equirectangular projection"""

    def setUp(self):
        self.proj = LocalProjection(9.99, 53.55)

    def test_origin_maps_to_origin(self):
        self.assertEqual(project_wgs84_local(9.99, 53.55, self.proj), Point2(0.0, 0.0))

    def test_one_degree_north(self):
        point = project_wgs84_local(9.99, 54.55, self.proj)
        self.assertAlmostEqual(point.x, 0.0)
        self.assertAlmostEqual(point.y, 111319.4908, delta=1e-3)

    def test_one_degree_east_at_53_5(self):
        proj = LocalProjection(10.0, 53.5)
        point = project_wgs84_local(11.0, 53.5, proj)
        self.assertAlmostEqual(point.x, 66215.3698, delta=0.05)
        self.assertAlmostEqual(point.x, DEGREE * math.cos(math.radians(53.5)), delta=1e-6)

    def test_inverse_round_trip(self):
        rng = SplitMix64(7)
        for _ in range(200):
            proj = LocalProjection(rng.uniform_range(-180, 180), rng.uniform_range(-89, 89))
            lon, lat = rng.uniform_range(-180, 180), rng.uniform_range(-90, 90)
            back_lon, back_lat = unproject_local_wgs84(project_wgs84_local(lon, lat, proj), proj)
            self.assertAlmostEqual(back_lon, lon, delta=1e-9)
            self.assertAlmostEqual(back_lat, lat, delta=1e-9)


class TestOverpassQuery(unittest.TestCase):
    """Test cases for Overpass QL generation"""

    def test_exact_query(self):
        query = build_overpass_query(GeoBBox(53.5, 9.9, 53.6, 10.0), ['primary'])
        self.assertEqual(
            query,
            '[out:json][timeout:60];way["highway"~"^(primary)$"]'
            '(53.5000000,9.9000000,53.6000000,10.0000000);out geom;'
        )

    def test_default_classes(self):
        query = build_overpass_query(GeoBBox(53.5, 9.9, 53.6, 10.0))
        self.assertIn('^(motorway|trunk|primary|secondary|tertiary|unclassified|residential)$', query)

    def test_link_variants(self):
        classes = with_link_variants(['primary', 'residential'])
        self.assertEqual(classes, ['primary', 'residential', 'primary_link'])
        query = build_overpass_query(GeoBBox(53.5, 9.9, 53.6, 10.0), classes)
        self.assertIn('primary|residential|primary_link', query)

    def test_invalid_class(self):
        with self.assertRaises(ValidationError):
            build_overpass_query(GeoBBox(53.5, 9.9, 53.6, 10.0), ['primary"];'])
        with self.assertRaises(ValidationError):
            build_overpass_query(GeoBBox(53.5, 9.9, 53.6, 10.0), [])

    def test_query_is_stable(self):
        bbox = GeoBBox(53.5, 9.9, 53.6, 10.0)
        self.assertEqual(build_overpass_query(bbox), build_overpass_query(bbox))


class TestOverpassClient(unittest.TestCase):
    """Test cases for the Overpass client, replaying recorded responses"""

    def setUp(self):
        self.bbox = GeoBBox(53.548, 9.99, 53.552, 9.998)
        self.proj = LocalProjection(*self.bbox.center())
        self.client = OverpassClient('https://overpass.example/api/interpreter', 60, requests.Session())

    def test_two_way_fixture(self):
        with patch.object(requests.Session, 'post', return_value=_response(200, _fixture('overpass_two_ways.json'))) as post:
            payload = self.client.fetch_roads(self.bbox, ['primary', 'secondary'])
        args, kwargs = post.call_args
        self.assertEqual(args[0], 'https://overpass.example/api/interpreter')
        self.assertEqual(kwargs['data'], {'data': build_overpass_query(self.bbox, ['primary', 'secondary'])})
        self.assertEqual(kwargs['timeout'], 60)
        features = parse_overpass_response(payload, self.proj)
        self.assertEqual(len(features.polylines), 2)
        self.assertEqual(len(features.polylines[0].vertices), 3)

    def test_empty_fixture(self):
        with patch.object(requests.Session, 'post', return_value=_response(200, _fixture('overpass_empty.json'))):
            payload = self.client.fetch_roads(self.bbox)
        self.assertEqual(len(parse_overpass_response(payload, self.proj).polylines), 0)

    def test_rate_limit(self):
        response = _response(429, _fixture('overpass_429.txt'), {'Retry-After': '30'})
        with patch.object(requests.Session, 'post', return_value=response):
            with self.assertRaises(RateLimitError) as ctx:
                self.client.fetch_roads(self.bbox)
        self.assertEqual(ctx.exception.status, 429)
        self.assertEqual(ctx.exception.retry_after, 30.0)
        self.assertEqual(ctx.exception.exit_code, 3)

    def test_server_error_carries_status(self):
        with patch.object(requests.Session, 'post', return_value=_response(504, b'Gateway Timeout')):
            with self.assertRaises(NetworkError) as ctx:
                self.client.fetch_roads(self.bbox)
        self.assertEqual(ctx.exception.status, 504)

    def test_timeout(self):
        with patch.object(requests.Session, 'post', side_effect=requests.Timeout('read timed out')):
            with self.assertRaises(NetworkTimeoutError):
                self.client.fetch_roads(self.bbox)

    def test_endpoint_must_be_http(self):
        client = OverpassClient('ftp://overpass.example/api', 60, requests.Session())
        with self.assertRaises(ValidationError):
            client.fetch_roads(self.bbox)


class TestOverpassParsing(unittest.TestCase):
    """Test cases for converting Overpass ways to polylines"""

    def setUp(self):
        self.proj = LocalProjection(10.0, 53.5)

    def _payload(self, elements) -> bytes:
        return json.dumps({'elements': elements}).encode('utf-8')

    def test_way_projection(self):
        payload = self._payload([{'type': 'way', 'id': 1, 'geometry': [
            {'lat': 53.5, 'lon': 10.0}, {'lat': 54.5, 'lon': 10.0}
        ]}])
        line = parse_overpass_response(payload, self.proj).polylines[0]
        self.assertEqual(line.vertices[0], Point2(0.0, 0.0))
        self.assertAlmostEqual(line.vertices[1].x, 0.0)
        self.assertAlmostEqual(line.vertices[1].y, 111319.4908, delta=1e-3)

    def test_empty_and_node_only(self):
        self.assertEqual(len(parse_overpass_response(self._payload([]), self.proj).polylines), 0)
        nodes = [{'type': 'node', 'id': 5, 'lat': 53.5, 'lon': 10.0}]
        self.assertEqual(len(parse_overpass_response(self._payload(nodes), self.proj).polylines), 0)

    def test_missing_geometry_names_way(self):
        with self.assertRaises(FormatError) as ctx:
            parse_overpass_response(self._payload([{'type': 'way', 'id': 4242, 'nodes': [1, 2]}]), self.proj)
        self.assertIn('4242', str(ctx.exception))

    def test_malformed_payload(self):
        with self.assertRaises(FormatError):
            parse_overpass_response(b'{"elements": [', self.proj)


if __name__ == '__main__':
    unittest.main()
