"""File formats: GeoJSON vectors, PNG rasters with world files, flat CSV tables."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image, PngImagePlugin

from .rasterize import Affine, Feature, GeoBox, GridCell, VectorLayer

MANIFEST_COLUMNS = ["cell_id", "country", "min_lon", "min_lat", "max_lon", "max_lat", "partial"]


class SchemaError(ValueError):
    pass


# -- vectors -------------------------------------------------------------

_KINDS = {"Polygon": "polygon", "LineString": "linestring", "Point": "point"}
_MULTI = {"MultiPolygon": "Polygon", "MultiLineString": "LineString", "MultiPoint": "Point"}


def _features_from_geometry(geom, tag, props):
    gtype = geom["type"]
    if gtype in _MULTI:
        out = []
        for part in geom["coordinates"]:
            out += _features_from_geometry({"type": _MULTI[gtype], "coordinates": part}, tag, props)
        return out
    if gtype not in _KINDS:
        raise SchemaError(f"unsupported geometry type {gtype!r}")
    coords = geom["coordinates"]
    if gtype == "Polygon":
        coords = coords[0]  # exterior ring; holes are not rasterised
    elif gtype == "Point":
        coords = [coords]
    return [Feature(_KINDS[gtype], coords, tag, props)]


def read_geojson(path) -> VectorLayer:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise SchemaError(f"{path}: expected a GeoJSON FeatureCollection")
    feats = []
    for f in doc.get("features", []):
        props = f.get("properties") or {}
        if "class" not in props:
            raise SchemaError(f"{path}: feature without a 'class' property")
        feats += _features_from_geometry(f["geometry"], str(props["class"]), props)
    return VectorLayer(feats)


def write_geojson(layer: VectorLayer, path):
    feats = []
    for f in layer.features:
        coords = f.coords.tolist()
        if f.kind == "polygon":
            ring = coords if coords[0] == coords[-1] else coords + [coords[0]]
            geom = {"type": "Polygon", "coordinates": [ring]}
        elif f.kind == "linestring":
            geom = {"type": "LineString", "coordinates": coords}
        else:
            geom = {"type": "Point", "coordinates": coords[0]}
        props = dict(f.properties, **{"class": f.class_tag})
        feats.append({"type": "Feature", "properties": props, "geometry": geom})
    with open(path, "w") as fh:
        json.dump({"type": "FeatureCollection", "features": feats}, fh, sort_keys=True)
        fh.write("\n")


# -- rasters -------------------------------------------------------------

def world_file_path(png_path):
    return Path(png_path).with_suffix(".pgw")


def write_world_file(path, tf: Affine):
    """ESRI world file: x size, y rotation, x rotation, y size, centre of the upper-left pixel."""
    cx, cy = tf.to_world(0.5, 0.5)
    vals = [tf.b, tf.e, tf.c, tf.f, float(cx), float(cy)]
    Path(path).write_text("".join(f"{v!r}\n" for v in vals))


def read_world_file(path) -> Affine:
    vals = [float(line) for line in Path(path).read_text().split()]
    if len(vals) != 6:
        raise SchemaError(f"{path}: world file needs 6 coefficients, found {len(vals)}")
    A, D, B, E, C, F = vals
    return Affine(C - 0.5 * A - 0.5 * B, A, B, F - 0.5 * D - 0.5 * E, D, E)


def write_png(path, array, transform: Affine | None = None, meta: dict | None = None):
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    info = PngImagePlugin.PngInfo()
    for k, v in sorted((meta or {}).items()):
        info.add_text(k, str(v))
    Image.fromarray(arr).save(path, pnginfo=info)
    if transform is not None:
        write_world_file(world_file_path(path), transform)


def read_png(path):
    with Image.open(path) as im:
        return np.asarray(im)


def read_png_geo(path):
    """(array, Affine) for a PNG with a world-file sidecar."""
    return read_png(path), read_world_file(world_file_path(path))


# -- tables --------------------------------------------------------------

def read_table(path, required):
    """Rows of a CSV (``#`` lines skipped) as dicts; missing columns raise SchemaError."""
    path = Path(path)
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    header = reader.fieldnames or []
    for col in required:
        if col not in header:
            raise SchemaError(f"{path}: missing column {col!r} (found {header})")
    return list(reader)


def write_table(path, columns, rows, comment=None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return "nan" if v != v else repr(v)
    return v


def write_manifest(path, cells, comment=None):
    rows = [{"cell_id": c.cell_id, "country": c.country, "min_lon": c.bounds.min_lon,
             "min_lat": c.bounds.min_lat, "max_lon": c.bounds.max_lon, "max_lat": c.bounds.max_lat,
             "partial": c.partial} for c in cells]
    write_table(path, MANIFEST_COLUMNS, rows, comment)


def read_manifest(path):
    cells = []
    for r in read_table(path, MANIFEST_COLUMNS):
        box = GeoBox(float(r["min_lon"]), float(r["min_lat"]), float(r["max_lon"]), float(r["max_lat"]))
        row, col = (int(x) for x in r["cell_id"].rsplit("-", 2)[-2:])
        cells.append(GridCell(r["cell_id"], r["country"], box, row, col, r["partial"] in ("1", "True", "true")))
    return cells
