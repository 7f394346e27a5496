import math

import numpy as np
import pytest
import shapely
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Polygon

from satinfra.rasterize import (
    Affine,
    Feature,
    GeoBox,
    GeometryError,
    GridCell,
    MaskRaster,
    VectorLayer,
    augment,
    crop_image,
    fill_polygon,
    make_grid,
    pad_image,
    point_in_polygon,
    polygon_centroid,
    rasterize_layer,
    rescale_colors,
    select_by_built_area,
    stroke_polyline,
    tile_raster,
)


def raster(size=40):
    box = GeoBox.from_center_km(10.0, 5.0, 1.0, 1.0)
    return MaskRaster.blank(Affine.for_box(box, size, size), size, size, 1000.0 / size)


def polygon_feature(r, ring_px, tag="building"):
    lon, lat = r.transform.to_world(np.asarray(ring_px)[:, 0], np.asarray(ring_px)[:, 1])
    return Feature("polygon", np.column_stack([lon, lat]), tag)


def shapely_fill(ring_px, h, w):
    poly = Polygon(ring_px)
    ys, xs = np.mgrid[:h, :w] + 0.5
    return shapely.covers(poly, shapely.points(xs, ys))


# -- geo transform -----------------------------------------------------------

def test_affine_round_trip():
    r = raster()
    xs = np.random.default_rng(0).uniform(-5, 45, size=(100, 2))
    lon, lat = r.transform.to_world(xs[:, 0], xs[:, 1])
    x, y = r.transform.to_pixel(lon, lat)
    assert np.allclose(x, xs[:, 0], atol=1e-9) and np.allclose(y, xs[:, 1], atol=1e-9)


def test_singular_affine_rejected():
    with pytest.raises(ValueError):
        Affine(0, 1, 2, 0, 2, 4)


def test_non_positive_scale_rejected():
    with pytest.raises(ValueError):
        MaskRaster(np.zeros((2, 2)), Affine(0, 1, 0, 0, 0, -1), 0.0)


# -- grid ----------------------------------------------------------------------

def test_grid_two_by_two():
    cells = make_grid(GeoBox.from_center_km(30, 0, 2, 2), 1.0, "KE")
    assert len(cells) == 4
    assert not any(c.partial for c in cells)
    assert [c.cell_id for c in cells] == ["KE-000-000", "KE-000-001", "KE-001-000", "KE-001-001"]
    # row-major from the north
    assert cells[0].bounds.max_lat > cells[2].bounds.max_lat
    assert cells[0].bounds.min_lon < cells[1].bounds.min_lon


def test_grid_partial_edge():
    cells = make_grid(GeoBox.from_center_km(30, 0, 2.5, 1), 1.0)
    assert len(cells) == 3
    assert [c.partial for c in cells] == [False, False, True]


def test_grid_covers_region_disjointly():
    region = GeoBox.from_center_km(20, -3, 10, 10)
    cells = make_grid(region, 1.0)
    assert len(cells) == 100
    rng = np.random.default_rng(0)
    lon = rng.uniform(region.min_lon, region.max_lon, 5000)
    lat = rng.uniform(region.min_lat, region.max_lat, 5000)
    hits = sum(c.bounds.contains(lon, lat).astype(int) for c in cells)
    assert np.all(hits == 1)


def test_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        make_grid(GeoBox(0, 0, 1, 1), 0)
    with pytest.raises(ValueError):
        GeoBox(0, 0, 0, 1)


def test_tile_raster_records_true_resolution():
    cell = make_grid(GeoBox.from_center_km(0, 0, 1, 1), 1.0)[0]
    t = tile_raster(cell, 400, 1.0)
    assert (t.height, t.width) == (400, 400)
    assert t.meters_per_pixel == pytest.approx(2.5)


# -- geometry validation -------------------------------------------------------

def test_invalid_geometry():
    with pytest.raises(GeometryError):
        Feature("polygon", [[0, 0], [1, 1], [1, 0], [0, 1]])  # bow tie
    with pytest.raises(GeometryError):
        Feature("polygon", [[0, 0], [1, 1], [2, 2]])
    with pytest.raises(GeometryError):
        Feature("linestring", [[0, 0]])
    with pytest.raises(GeometryError):
        Feature("ring", [[0, 0], [1, 0], [1, 1]])


# -- rasterize_layer -----------------------------------------------------------

SQUARE = [[10, 10], [20, 10], [20, 20], [10, 20]]


def test_fill_square_has_100_pixels():
    r = raster()
    out = rasterize_layer(VectorLayer([polygon_feature(r, SQUARE)]), r, "fill")
    assert np.count_nonzero(out.values) == 100
    assert set(np.unique(out.values)) == {0, 255}
    assert np.all(out.values[10:20, 10:20] == 255)


def test_centroid_disc_at_square_centre():
    r = raster()
    out = rasterize_layer(VectorLayer([polygon_feature(r, SQUARE)]), r, "centroid", centroid_radius=3)
    rows, cols = np.nonzero(out.values)
    assert rows.mean() == pytest.approx(15) and cols.mean() == pytest.approx(15)
    assert out.values[15, 15] == 255 and out.values[15, 18] == 255 and out.values[15, 19] == 0


def test_empty_layer_all_zero():
    r = raster()
    for mode in ("fill", "contour", "centroid", "road"):
        assert not rasterize_layer(VectorLayer([]), r, mode).values.any()


def test_contour_is_boundary_of_fill():
    r = raster()
    layer = VectorLayer([polygon_feature(r, SQUARE)])
    contour = rasterize_layer(layer, r, "contour").values > 0
    assert np.count_nonzero(contour) == 36
    assert not contour[12:18, 12:18].any()


def test_road_stroke_width():
    r = raster()
    lon, lat = r.transform.to_world(np.array([5.0, 35.0]), np.array([20.0, 20.0]))
    road = Feature("linestring", np.column_stack([lon, lat]), "road")
    out = rasterize_layer(VectorLayer([road]), r, "road", width_px=4).values > 0
    # centres within 2 px of y = 20: rows 18..21 (centres 18.5..21.5)
    assert np.array_equal(np.nonzero(out[:, 20])[0], [18, 19, 20, 21])


def test_fill_is_idempotent():
    r = raster()
    layer = VectorLayer([polygon_feature(r, [[3.2, 4.1], [30.7, 8.3], [22.5, 33.9], [6.6, 25.0]])])
    a = rasterize_layer(layer, r, "fill").values
    b = rasterize_layer(layer, r, "fill").values
    assert np.array_equal(a, b)


def test_polygon_on_pixel_centres_includes_ties():
    ring = [[2.5, 2.5], [6.5, 2.5], [6.5, 6.5], [2.5, 6.5]]
    assert np.count_nonzero(fill_polygon(ring, 10, 10)) == 25


def random_convex(rng, size):
    pts = rng.uniform(1, size - 1, size=(12, 2))
    hull = shapely.MultiPoint([tuple(p) for p in pts]).convex_hull
    return np.array(hull.exterior.coords)[:-1]


def random_star(rng, size):
    k = int(rng.integers(5, 12))
    ang = np.sort(rng.uniform(0, 2 * np.pi, k))
    rad = rng.uniform(size * 0.1, size * 0.45, k)
    return np.column_stack([size / 2 + rad * np.cos(ang), size / 2 + rad * np.sin(ang)])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_fill_matches_shapely(seed, convex):
    rng = np.random.default_rng(seed)
    ring = random_convex(rng, 32) if convex else random_star(rng, 32)
    if not Polygon(ring).is_valid:
        return
    assert np.array_equal(fill_polygon(ring, 32, 32), shapely_fill(ring, 32, 32))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fill_count_within_perimeter_of_area(seed):
    ring = random_convex(np.random.default_rng(seed), 40)
    poly = Polygon(ring)
    count = np.count_nonzero(fill_polygon(ring, 40, 40))
    assert abs(count - poly.area) <= poly.length


def test_point_in_polygon_boundary_counts():
    ring = np.array(SQUARE, float)
    pts = [[15, 15], [10, 15], [20, 20], [25, 15], [15, 9.999]]
    assert point_in_polygon(pts, ring).tolist() == [True, True, True, False, False]


def test_polygon_centroid_of_l_shape():
    ring = [[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]]
    c = Polygon(ring).centroid
    assert polygon_centroid(ring) == pytest.approx((c.x, c.y))


def test_stroke_matches_distance_oracle():
    pts = np.array([[3.0, 4.0], [20.0, 25.0], [28.0, 6.0]])
    out = stroke_polyline(pts, 32, 32, 3.0)
    line = shapely.LineString(pts)
    ys, xs = np.mgrid[:32, :32] + 0.5
    d = shapely.distance(line, shapely.points(xs, ys))
    assert np.array_equal(out, d <= 1.5 + 1e-9)


# -- preprocessing -------------------------------------------------------------

def test_pad_sizes():
    assert pad_image(np.ones((400, 400, 3)), 8).shape == (416, 416, 3)
    assert 416 % 32 == 0
    img = np.random.default_rng(0).random((64, 64))
    assert np.array_equal(pad_image(img, 0), img)
    p = pad_image(img, 8)
    assert p.shape == (80, 80)
    assert np.array_equal(p[8:72, 8:72], img)
    assert p[:8].sum() == 0 and p[:, :8].sum() == 0 and p[72:].sum() == 0 and p[:, 72:].sum() == 0
    with pytest.raises(ValueError):
        pad_image(img, -1)


def test_pad_crop_identity():
    img = np.random.default_rng(1).random((20, 20, 3))
    assert np.array_equal(crop_image(pad_image(img, 5), 5), img)


def test_rescale_colors():
    img = np.zeros((4, 4, 3), dtype=np.uint8)
    img[..., 0] = 180
    img[0, 0, 0] = 90
    img[..., 1] = 255
    out = rescale_colors(img)
    assert out[..., 0].max() == 255
    assert out[0, 0, 0] == round(90 * 255 / 180)
    assert 255 / 180 == pytest.approx(1.4167, abs=1e-4)
    assert np.array_equal(out[..., 1], img[..., 1])
    assert np.array_equal(out[..., 2], img[..., 2])
    assert out.dtype == np.uint8


def test_augment_group_property():
    rng = np.random.default_rng(0)
    img, mask = rng.random((10, 10, 3)), rng.random((10, 10)) > 0.5
    pairs = augment(img, mask)
    assert len(pairs) == 4
    img90, mask90 = pairs[1]
    back_img, back_mask = augment(*augment(*augment(img90, mask90)[1])[1])[1]
    assert np.array_equal(back_img, img) and np.array_equal(back_mask, mask)


def test_augment_coordinate_map():
    mask = np.zeros((100, 100), bool)
    mask[10, 20] = True
    rotated = augment(np.zeros((100, 100, 3)), mask)[1][1]
    # counter-clockwise quarter turn: (r, c) -> (W-1-c, r)
    assert np.argwhere(rotated).tolist() == [[100 - 1 - 20, 10]]


def test_augment_symmetric_mask():
    yy, xx = np.mgrid[:21, :21]
    mask = (yy - 10) ** 2 + (xx - 10) ** 2 <= 36
    masks = [m for _, m in augment(np.zeros((21, 21, 3)), mask)]
    assert all(np.array_equal(m, mask) for m in masks)


def test_augment_rejects_non_square():
    with pytest.raises(ValueError):
        augment(np.zeros((4, 5, 3)), np.zeros((4, 5)))


def test_select_by_built_area():
    cells = ["a", "b", "c", "d"]
    region = {"a": 1, "b": 1, "c": 2, "d": 1}
    area = {"a": 5.0, "b": 9.0, "c": 100.0, "d": 5.0}
    assert select_by_built_area(cells, region, area, {1}, 2) == ["b", "a"]


def test_grid_cell_center():
    c = GridCell("x", "", GeoBox(0, 0, 2, 2), 0, 0, False)
    assert c.center == (1, 1)
    assert math.isclose(GeoBox(0, 0, 2, 2).height_km, 2 * math.pi * 6371.0088 / 180)
