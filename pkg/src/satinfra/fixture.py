"""Self-contained synthetic pipeline fixture.

Writes vectors, imagery, a nightlight raster, survey clusters and a
config file into a directory so the whole pipeline can run offline.
Every tile is generated from a latent "development" level, so building
counts, road lengths, light and wealth are correlated the way the
downstream benchmark expects. A fraction of tiles lose roads from the
label vectors while keeping them in the imagery and in the truth file.
"""
from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import (
    BenchmarkSection,
    CountSection,
    FeaturesSection,
    GridSection,
    JudgeSection,
    Paths,
    PipelineConfig,
    PreprocessSection,
    RasterizeSection,
    Region,
    TrainSection,
    dump_config,
)
from .io import write_geojson, write_png, write_table
from .nn.unet import UnetConfig
from .rasterize import KM_PER_DEG, Affine, Feature, GeoBox, VectorLayer, make_grid, rasterize_layer, tile_raster
from .synthetic import render

COUNTRIES = ("AA", "BB", "CC", "DD")


def _tile_features(rng, tile, dev, tile_px):
    """Building rings and road polylines (pixel coordinates) for one tile."""
    buildings, centres = [], []
    n_b = int(rng.poisson(1 + 9 * dev))
    tries = 0
    while len(centres) < n_b and tries < 400:
        tries += 1
        c = rng.uniform(5, tile_px - 5, size=2)
        if all(np.hypot(*(c - o)) > 8 for o in centres):
            centres.append(c)
            h = rng.uniform(1.5, 2.5)
            x, y = c
            buildings.append(np.array([[x - h, y - h], [x + h, y - h], [x + h, y + h], [x - h, y + h]]))
    roads = []
    n_r = 1 + int(dev > 0.45) + int(dev > 0.75)
    for _ in range(n_r):
        off = rng.uniform(6, tile_px - 6)
        bend = rng.uniform(-4, 4)
        lo, hi = 1.5, tile_px - 1.5
        line = np.array([[lo, off], [tile_px / 2, off + bend], [hi, off]])
        roads.append(line if rng.random() < 0.5 else line[:, ::-1])
    return buildings, roads


def _to_world(tf: Affine, px):
    lon, lat = tf.to_world(px[:, 0], px[:, 1])
    return np.column_stack([lon, lat])


def fixture_config(region_km=4, tile_px=48, epochs=6, ensemble_size=3, seed=0, **unet) -> PipelineConfig:
    regions, lon0, lat0 = [], 30.0, -1.0
    step = (region_km + 1) / KM_PER_DEG
    for i, code in enumerate(COUNTRIES):
        box = GeoBox.from_center_km(lon0 + i * step, lat0, region_km, region_km)
        regions.append(Region(code, [box.min_lon, box.min_lat, box.max_lon, box.max_lat]))
    pad = 8
    ucfg = UnetConfig(input_size=tile_px + 2 * pad, base_filters=4, depth=2, dropout_rate=0.1)
    ucfg = replace(ucfg, **unet)
    return PipelineConfig(
        seed=seed,
        paths=Paths(truth_vectors="truth.geojson"),
        grid=GridSection(regions=regions, cell_km=1.0, tile_px=tile_px),
        rasterize=RasterizeSection(centroid_radius=2, road_width_px=3.0),
        preprocess=PreprocessSection(pad=pad),
        unet=ucfg,
        train=TrainSection(epochs=epochs, learning_rate=0.05, batch_size=8, ensemble_size=ensemble_size),
        judge=JudgeSection(rounds=2),
        count=CountSection(min_blob_area=3, road_threshold=127.0),
        features=FeaturesSection(radius_km=1.5, min_cells=1),
        benchmark=BenchmarkSection(),
    ).validate()


def write_fixture(root, seed=0, clusters_per_country=6, drop_frac=0.3, **cfg_kwargs):
    """Populate ``root`` and return the path of its config file."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    cfg = replace(fixture_config(seed=seed, **cfg_kwargs), base_dir=root)
    rng = np.random.default_rng([seed, 2024])
    tile_px = cfg.grid.tile_px
    label_feats, truth_feats, cells, devs = [], [], [], {}
    for region in cfg.regions():
        mu = rng.uniform(0.15, 0.85)
        for cell in make_grid(GeoBox(*region.bbox), cfg.grid.cell_km, region.country):
            dev = float(np.clip(mu + rng.normal(0, 0.2), 0, 1))
            tile = tile_raster(cell, tile_px, cfg.grid.cell_km)
            b_px, r_px = _tile_features(rng, tile, dev, tile_px)
            b = [Feature("polygon", _to_world(tile.transform, p), "building") for p in b_px]
            r = [Feature("linestring", _to_world(tile.transform, p), "road") for p in r_px]
            truth_feats += b + r
            kept_roads = r
            if rng.random() < drop_frac:
                keep = rng.permutation(len(r))[: len(r) // 2]
                kept_roads = [r[i] for i in sorted(keep)]
            label_feats += b + kept_roads
            bmask = rasterize_layer(VectorLayer(b), tile, "fill").values > 0
            rmask = rasterize_layer(VectorLayer(r), tile, "road", width_px=cfg.rasterize.road_width_px).values > 0
            img = render(bmask, rng, roads=rmask)
            write_png(root / "images" / f"{cell.cell_id}.png", img, tile.transform)
            cells.append(cell)
            devs[cell.cell_id] = dev
    write_geojson(VectorLayer(label_feats), root / "vectors.geojson")
    write_geojson(VectorLayer(truth_feats), root / "truth.geojson")
    _write_nightlight(root / "nightlight.png", cells, devs, rng)
    _write_clusters(root / "clusters.csv", cfg, cells, devs, rng, clusters_per_country)
    path = root / "config.yaml"
    path.write_text(dump_config(cfg))
    return path


def _write_nightlight(path, cells, devs, rng, px_per_km=4):
    lo_lon = min(c.bounds.min_lon for c in cells)
    hi_lat = max(c.bounds.max_lat for c in cells)
    hi_lon = max(c.bounds.max_lon for c in cells)
    lo_lat = min(c.bounds.min_lat for c in cells)
    box = GeoBox(lo_lon, lo_lat, hi_lon, hi_lat)
    w = max(1, math.ceil(box.width_km * px_per_km))
    h = max(1, math.ceil(box.height_km * px_per_km))
    tf = Affine.for_box(box, w, h)
    xs, ys = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    lon, lat = tf.to_world(xs, ys)
    light = np.zeros((h, w))
    for c in cells:
        inside = c.bounds.contains(lon, lat)
        light[inside] = 200 * devs[c.cell_id] ** 2
    light += rng.normal(0, 6, size=light.shape)
    write_png(path, np.clip(light, 0, 255), tf)


def _write_clusters(path, cfg, cells, devs, rng, per_country):
    rows = []
    for region in cfg.regions():
        box = GeoBox(*region.bbox)
        own = [c for c in cells if c.country == region.country]
        pooled = []
        for k in range(per_country):
            lon = rng.uniform(box.min_lon, box.max_lon)
            lat = rng.uniform(box.min_lat, box.max_lat)
            d = np.array([math.hypot((lon - c.center[0]) * box.km_per_deg_lon, (lat - c.center[1]) * KM_PER_DEG)
                          for c in own])
            near = [devs[c.cell_id] for c, dist in zip(own, d) if dist <= cfg.features.radius_km]
            level = float(np.mean(near)) if near else 0.0
            pooled.append(3.0 * level - 1.0 + rng.normal(0, 0.15))
            rows.append({"cluster_id": f"{region.country}{k:03d}", "country": region.country,
                         "lon": lon, "lat": lat})
        pooled = np.array(pooled)
        for row, wp in zip(rows[-per_country:], pooled):
            row["wealthpooled"] = float(wp)
            # per-country index: same ordering, country mean removed
            row["wealth"] = float(wp - pooled.mean())
    write_table(path, ["cluster_id", "country", "lon", "lat", "wealth", "wealthpooled"], rows)
