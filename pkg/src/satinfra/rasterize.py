"""Vector-to-raster conversion, tile grids and image preprocessing.

Pixel space is continuous ``(x, y) = (column, row)``; pixel ``(r, c)``
covers ``[c, c+1) x [r, r+1)`` and its centre is ``(c + 0.5, r + 0.5)``.
A pixel belongs to a polygon when its centre is inside or on the
boundary. Geography uses a local equirectangular approximation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_KM = 6371.0088
KM_PER_DEG = math.pi * EARTH_RADIUS_KM / 180.0
_TOL = 1e-9

MODES = ("fill", "contour", "centroid", "road")


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class GeoBox:
    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float

    def __post_init__(self):
        if not (self.max_lon > self.min_lon and self.max_lat > self.min_lat):
            raise ValueError(f"degenerate region {self}")

    @classmethod
    def from_center_km(cls, lon, lat, width_km, height_km):
        dlat = height_km / KM_PER_DEG
        dlon = width_km / (KM_PER_DEG * math.cos(math.radians(lat)))
        return cls(lon - dlon / 2, lat - dlat / 2, lon + dlon / 2, lat + dlat / 2)

    @property
    def center(self):
        return (0.5 * (self.min_lon + self.max_lon), 0.5 * (self.min_lat + self.max_lat))

    @property
    def km_per_deg_lon(self):
        return KM_PER_DEG * math.cos(math.radians(self.center[1]))

    @property
    def width_km(self):
        return (self.max_lon - self.min_lon) * self.km_per_deg_lon

    @property
    def height_km(self):
        return (self.max_lat - self.min_lat) * KM_PER_DEG

    def contains(self, lon, lat):
        lon = np.asarray(lon)
        lat = np.asarray(lat)
        return (lon >= self.min_lon) & (lon < self.max_lon) & (lat >= self.min_lat) & (lat < self.max_lat)


@dataclass(frozen=True)
class Affine:
    """GDAL-ordered affine map: lon = a + b*x + c*y, lat = d + e*x + f*y."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    def __post_init__(self):
        if abs(self.b * self.f - self.c * self.e) == 0:
            raise ValueError("affine transform is not invertible")

    @classmethod
    def for_box(cls, box: GeoBox, width, height):
        return cls(box.min_lon, (box.max_lon - box.min_lon) / width, 0.0,
                   box.max_lat, 0.0, -(box.max_lat - box.min_lat) / height)

    def to_world(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return self.a + self.b * x + self.c * y, self.d + self.e * x + self.f * y

    def to_pixel(self, lon, lat):
        det = self.b * self.f - self.c * self.e
        u = np.asarray(lon, dtype=np.float64) - self.a
        v = np.asarray(lat, dtype=np.float64) - self.d
        return (self.f * u - self.c * v) / det, (-self.e * u + self.b * v) / det

    def coefficients(self):
        return (self.a, self.b, self.c, self.d, self.e, self.f)


@dataclass
class MaskRaster:
    values: np.ndarray
    transform: Affine
    meters_per_pixel: float

    def __post_init__(self):
        if self.meters_per_pixel <= 0:
            raise ValueError("meters_per_pixel must be positive")

    @classmethod
    def blank(cls, transform, width, height, meters_per_pixel, dtype=np.uint8):
        return cls(np.zeros((height, width), dtype=dtype), transform, meters_per_pixel)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def pixel_centers_world(self):
        rows, cols = np.mgrid[:self.height, :self.width]
        return self.transform.to_world(cols + 0.5, rows + 0.5)


@dataclass
class Feature:
    kind: str  # polygon | linestring | point
    coords: np.ndarray  # (k, 2) lon/lat; polygons hold the exterior ring
    class_tag: str = ""
    properties: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 2)
        validate_geometry(self.kind, self.coords)


@dataclass
class VectorLayer:
    features: list[Feature] = field(default_factory=list)

    def of_class(self, tag):
        return VectorLayer([f for f in self.features if f.class_tag == tag])

    def of_kind(self, kind):
        return [f for f in self.features if f.kind == kind]

    def __len__(self):
        return len(self.features)


# -- geometry ------------------------------------------------------------

def _open_ring(ring):
    ring = np.asarray(ring, dtype=np.float64)
    if len(ring) > 1 and np.allclose(ring[0], ring[-1]):
        ring = ring[:-1]
    return ring


def _segments_cross(p1, p2, p3, p4):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return d1 * d2 < 0 and d3 * d4 < 0


def validate_geometry(kind, coords):
    if kind == "polygon":
        ring = _open_ring(coords)
        if len(ring) < 3 or abs(polygon_area(ring)) == 0:
            raise GeometryError("polygon needs at least 3 non-collinear vertices")
        k = len(ring)
        for i in range(k):
            for j in range(i + 2, k):
                if i == 0 and j == k - 1:
                    continue
                if _segments_cross(ring[i], ring[(i + 1) % k], ring[j], ring[(j + 1) % k]):
                    raise GeometryError("polygon ring self-intersects")
    elif kind == "linestring":
        if len(coords) < 2:
            raise GeometryError("polyline needs at least 2 vertices")
    elif kind == "point":
        if len(coords) != 1:
            raise GeometryError("point needs exactly one coordinate")
    else:
        raise GeometryError(f"unknown geometry kind {kind!r}")
    if not np.all(np.isfinite(coords)):
        raise GeometryError("non-finite coordinate")


def polygon_area(ring):
    """Signed shoelace area of an open or closed ring."""
    r = _open_ring(ring)
    x, y = r[:, 0], r[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(ring):
    r = _open_ring(ring)
    a = polygon_area(r)
    x, y = r[:, 0], r[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    return (float(np.sum((x + xn) * cross) / (6 * a)), float(np.sum((y + yn) * cross) / (6 * a)))


def point_in_polygon(points, ring):
    """Even-odd test for (n, 2) points; points on the boundary count as inside."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    r = _open_ring(ring)
    px, py = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    on_edge = np.zeros(len(pts), dtype=bool)
    for (x0, y0), (x1, y1) in zip(r, np.roll(r, -1, axis=0)):
        straddle = (y0 <= py) != (y1 <= py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= straddle & (px < xc)
        # boundary: collinear and within the segment's bounding box
        cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        seg = max(math.hypot(x1 - x0, y1 - y0), 1e-300)
        on_edge |= (np.abs(cross) / seg <= _TOL) & (px >= min(x0, x1) - _TOL) & (px <= max(x0, x1) + _TOL) \
            & (py >= min(y0, y1) - _TOL) & (py <= max(y0, y1) + _TOL)
    return inside | on_edge


def fill_polygon(ring_px, height, width):
    """Scanline fill of a pixel-space ring; centre-of-pixel rule, ties included."""
    r = _open_ring(ring_px)
    out = np.zeros((height, width), dtype=bool)
    edges = list(zip(r, np.roll(r, -1, axis=0)))
    ymin, ymax = r[:, 1].min(), r[:, 1].max()
    row_lo = max(int(math.ceil(ymin - 0.5 - _TOL)), 0)
    row_hi = min(int(math.floor(ymax - 0.5 + _TOL)), height - 1)
    for row in range(row_lo, row_hi + 1):
        yc = row + 0.5
        xs = []
        for (x0, y0), (x1, y1) in edges:
            if (y0 <= yc < y1) or (y1 <= yc < y0):
                xs.append(x0 + (yc - y0) * (x1 - x0) / (y1 - y0))
        xs.sort()
        for xl, xr in zip(xs[0::2], xs[1::2]):
            _fill_span(out[row], xl, xr, width)
        # centres lying exactly on an edge
        for (x0, y0), (x1, y1) in edges:
            if abs(y1 - y0) <= _TOL:
                if abs(yc - y0) <= _TOL:
                    _fill_span(out[row], min(x0, x1), max(x0, x1), width)
            elif min(y0, y1) - _TOL <= yc <= max(y0, y1) + _TOL:
                x = x0 + (yc - y0) * (x1 - x0) / (y1 - y0)
                c = x - 0.5
                if abs(c - round(c)) <= _TOL and 0 <= round(c) < width:
                    out[row, int(round(c))] = True
    return out


def _fill_span(row, xl, xr, width):
    c0 = max(int(math.ceil(xl - 0.5 - _TOL)), 0)
    c1 = min(int(math.floor(xr - 0.5 + _TOL)), width - 1)
    if c1 >= c0:
        row[c0:c1 + 1] = True


def stroke_polyline(pts_px, height, width, width_px):
    """Pixels whose centres lie within ``width_px / 2`` of the polyline."""
    out = np.zeros((height, width), dtype=bool)
    half = width_px / 2.0
    pts = np.asarray(pts_px, dtype=np.float64)
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        c0 = max(int(math.floor(min(x0, x1) - half)), 0)
        c1 = min(int(math.ceil(max(x0, x1) + half)), width - 1)
        r0 = max(int(math.floor(min(y0, y1) - half)), 0)
        r1 = min(int(math.ceil(max(y0, y1) + half)), height - 1)
        if c1 < c0 or r1 < r0:
            continue
        yy, xx = np.mgrid[r0:r1 + 1, c0:c1 + 1] + 0.5
        dx, dy = x1 - x0, y1 - y0
        L2 = dx * dx + dy * dy
        t = np.zeros_like(xx) if L2 == 0 else np.clip(((xx - x0) * dx + (yy - y0) * dy) / L2, 0.0, 1.0)
        d2 = (xx - x0 - t * dx) ** 2 + (yy - y0 - t * dy) ** 2
        out[r0:r1 + 1, c0:c1 + 1] |= d2 <= half * half + _TOL
    return out


def disc_at(height, width, row, col, radius):
    yy, xx = np.ogrid[:height, :width]
    return (yy - row) ** 2 + (xx - col) ** 2 <= radius * radius


def inner_boundary(mask):
    """Foreground pixels with a 4-neighbour outside the mask (or the raster)."""
    p = np.pad(mask, 1)
    interior = p[1:-1, 1:-1] & p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return mask & ~interior


# -- rasterization -------------------------------------------------------

def rasterize_layer(layer: VectorLayer, target: MaskRaster, mode="fill", width_px=5.0,
                    centroid_radius=3) -> MaskRaster:
    """Burn ``layer`` into a new raster with ``target``'s geometry.

    fill/contour burn polygons, centroid burns a disc at each polygon
    centroid (and each point), road strokes linestrings.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    h, w = target.height, target.width
    out = np.zeros((h, w), dtype=bool)
    tf = target.transform
    for feat in layer.features:
        x, y = tf.to_pixel(feat.coords[:, 0], feat.coords[:, 1])
        px = np.column_stack([x, y])
        if mode in ("fill", "contour") and feat.kind == "polygon":
            filled = fill_polygon(px, h, w)
            out |= inner_boundary(filled) if mode == "contour" else filled
        elif mode == "centroid" and feat.kind in ("polygon", "point"):
            cx, cy = polygon_centroid(px) if feat.kind == "polygon" else px[0]
            out |= disc_at(h, w, math.floor(cy + _TOL), math.floor(cx + _TOL), centroid_radius)
        elif mode == "road" and feat.kind == "linestring":
            out |= stroke_polyline(px, h, w, width_px)
    return MaskRaster(np.where(out, 255, 0).astype(np.uint8), tf, target.meters_per_pixel)


# -- grid ----------------------------------------------------------------

@dataclass(frozen=True)
class GridCell:
    cell_id: str
    country: str
    bounds: GeoBox
    row: int
    col: int
    partial: bool

    @property
    def center(self):
        return self.bounds.center


def make_grid(region: GeoBox, cell_km=1.0, country="") -> list[GridCell]:
    """Row-major (north to south, west to east) cells of ``cell_km`` covering ``region``.

    Edge cells keep their full size and extend past the region; they are
    flagged ``partial``.
    """
    if cell_km <= 0:
        raise ValueError("cell_km must be positive")
    dlat = cell_km / KM_PER_DEG
    dlon = cell_km / region.km_per_deg_lon
    n_rows = max(1, math.ceil((region.max_lat - region.min_lat) / dlat - 1e-9))
    n_cols = max(1, math.ceil((region.max_lon - region.min_lon) / dlon - 1e-9))
    cells = []
    prefix = f"{country}-" if country else ""
    for r in range(n_rows):
        top = region.max_lat - r * dlat
        for c in range(n_cols):
            left = region.min_lon + c * dlon
            box = GeoBox(left, top - dlat, left + dlon, top)
            partial = (box.max_lon > region.max_lon + 1e-9 * dlon) or (box.min_lat < region.min_lat - 1e-9 * dlat)
            cells.append(GridCell(f"{prefix}{r:03d}-{c:03d}", country, box, r, c, bool(partial)))
    return cells


def tile_raster(cell: GridCell, tile_px=400, cell_km=1.0) -> MaskRaster:
    """Blank raster for a grid cell, recording its true ground resolution."""
    return MaskRaster.blank(Affine.for_box(cell.bounds, tile_px, tile_px), tile_px, tile_px,
                            cell_km * 1000.0 / tile_px)


def polygon_area_m2(ring_lonlat):
    r = _open_ring(ring_lonlat)
    lat0 = float(np.mean(r[:, 1]))
    x = r[:, 0] * KM_PER_DEG * math.cos(math.radians(lat0)) * 1000.0
    y = r[:, 1] * KM_PER_DEG * 1000.0
    return abs(polygon_area(np.column_stack([x, y])))


def select_by_built_area(cells, region_of, built_area, seed_regions, limit):
    """Cells inside ``seed_regions`` ordered by built-up area, largest first, up to ``limit``.

    ``region_of`` maps cell id to an administrative region id and
    ``built_area`` maps cell id to square metres of building footprint.
    Ties break on cell id.
    """
    pool = [c for c in cells if region_of.get(c) in seed_regions]
    pool.sort(key=lambda c: (-built_area.get(c, 0.0), c))
    return pool[:limit]


# -- preprocessing -------------------------------------------------------

def pad_image(img, pad=8):
    """Zero-pad the two leading (spatial) axes by ``pad`` on every side."""
    if pad < 0:
        raise ValueError("pad must be >= 0")
    img = np.asarray(img)
    widths = [(pad, pad), (pad, pad)] + [(0, 0)] * (img.ndim - 2)
    return np.pad(img, widths)


def crop_image(img, pad=8):
    img = np.asarray(img)
    if pad == 0:
        return img
    return img[pad:-pad, pad:-pad]


def rescale_colors(img):
    """Stretch each channel of an (H, W, C) image so its maximum becomes 255.

    All-zero channels are left alone. Integer input gives rounded output
    of the same dtype.
    """
    arr = np.asarray(img)
    out = arr.astype(np.float64)
    cmax = out.reshape(-1, out.shape[-1]).max(axis=0)
    scale = np.where(cmax > 0, 255.0 / np.where(cmax > 0, cmax, 1.0), 1.0)
    out = out * scale
    if np.issubdtype(arr.dtype, np.integer):
        return np.clip(np.rint(out), 0, 255).astype(arr.dtype)
    return out


def augment(img, mask):
    """Original plus 90/180/270 degree counter-clockwise rotations, identically applied."""
    img = np.asarray(img)
    mask = np.asarray(mask)
    if img.shape[0] != img.shape[1] or mask.shape[:2] != img.shape[:2]:
        raise ValueError("augment needs square, aligned image and mask")
    return [(np.rot90(img, k, axes=(0, 1)).copy(), np.rot90(mask, k, axes=(0, 1)).copy()) for k in range(4)]
