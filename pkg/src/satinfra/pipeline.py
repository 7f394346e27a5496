"""Pipeline stages. Each reads only its declared inputs and writes only its outputs.

Output layout under ``paths.outputs``::

    grid.csv                         rasterize
    masks/<cell>_<target>.png/.pgw   rasterize
    models/<target>_m<k>.sunet       train
    logs/<target>_m<k>.csv           train
    judge/<target>_round<r>.csv      judge
    models/<target>_judged_m<k>.sunet  judge
    predictions/<cell>_<target>.png  predict
    counts.csv, metrics/<cell>.csv, count_summary.csv   count
    cells.csv, features.csv          features
    benchmark_<label>*.csv           benchmark
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import judge as judge_mod
from . import postprocess as pp
from .benchmark import ModelSpec, format_table, loocv_by_country
from .benchmark import cv as cvmod
from .config import PipelineConfig, config_hash, stage_seed
from .features import (
    VARIABLES,
    ClusterSite,
    FeatureRow,
    build_matrix,
    cluster_features,
    nightlight_stat,
    stat_names,
)
from .io import (
    read_geojson,
    read_manifest,
    read_png,
    read_png_geo,
    read_table,
    write_manifest,
    write_png,
    write_table,
)
from .nn import SatUnet, TrainConfig, load_checkpoint, save_checkpoint, train
from .rasterize import (
    GeoBox,
    MaskRaster,
    VectorLayer,
    augment,
    crop_image,
    make_grid,
    pad_image,
    polygon_centroid,
    rasterize_layer,
    rescale_colors,
    tile_raster,
)

log = logging.getLogger(__name__)

STAGES = ("rasterize", "train", "judge", "predict", "count", "features", "benchmark")
TARGET_MODES = {"buildings": "centroid", "roads": "road"}
COUNT_COLUMNS = ["cell_id", "buildings", "road_m", "road_components", "nightlight"]
METRIC_COLUMNS = ["cell_id", "threshold", "tp_count", "total_pred", "total_truth", "tp_rate",
                  "pred_to_mask", "fp_rate", "tp_any"]
CLUSTER_COLUMNS = ["cluster_id", "country", "lon", "lat", "wealth", "wealthpooled"]


class StageError(RuntimeError):
    def __init__(self, stage, message, kind="stage_error", path=None):
        super().__init__(message)
        self.stage = stage
        self.kind = kind
        self.path = str(path) if path else None

    def report(self):
        return {"stage": self.stage, "error": self.kind, "message": str(self), "path": self.path}


class Outputs:
    """Tracks files written by a stage and deletes them if the stage fails."""

    def __init__(self):
        self.written: list[Path] = []

    def add(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(path)
        return path

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            for p in self.written:
                for q in (p, p.with_suffix(".pgw")):
                    if q.exists():
                        q.unlink()
        return False


def provenance(cfg, stage):
    return {"config_sha256": config_hash(cfg), "seed": cfg.seed, "stage": stage}


def _comment(cfg, stage):
    return " ".join(f"{k}={v}" for k, v in provenance(cfg, stage).items())


def _require(stage, paths):
    for p in paths:
        if not Path(p).exists():
            raise StageError(stage, f"missing input: {p}", "missing_input", p)


def _map(fn, items, jobs):
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


# -- shared helpers ------------------------------------------------------

def grid_cells(cfg: PipelineConfig):
    cells = []
    for region in cfg.regions():
        cells += make_grid(GeoBox(*region.bbox), cfg.grid.cell_km, region.country)
    return cells


def clip_layer(layer: VectorLayer, box: GeoBox):
    keep = []
    for f in layer.features:
        lo, hi = f.coords.min(axis=0), f.coords.max(axis=0)
        if lo[0] <= box.max_lon and hi[0] >= box.min_lon and lo[1] <= box.max_lat and hi[1] >= box.min_lat:
            keep.append(f)
    return VectorLayer(keep)


def prepare_image(img, cfg: PipelineConfig):
    """(H, W, 3) uint8 -> padded (3, S, S) float32 in [0, 1]."""
    img = np.asarray(img)[..., :3]
    if cfg.preprocess.rescale_colors:
        img = rescale_colors(img)
    x = np.asarray(img, dtype=np.float32) / 255.0
    return pad_image(x, cfg.preprocess.pad).transpose(2, 0, 1)


def _tile_image_path(cfg, cell_id):
    return cfg.path("images") / f"{cell_id}.png"


def _mask_path(cfg, cell_id, target):
    return cfg.out / "masks" / f"{cell_id}_{target}.png"


def _load_training_arrays(cfg, cells, target):
    images = np.stack([prepare_image(read_png(_tile_image_path(cfg, c.cell_id)), cfg) for c in cells])
    masks = np.stack([(read_png(_mask_path(cfg, c.cell_id, target)) > 0).astype(np.uint8) for c in cells])
    return images, masks


def _training_pairs(cfg, images, masks):
    pad = cfg.preprocess.pad
    pairs = []
    for img, m in zip(images, masks):
        mp = pad_image(m, pad)
        if cfg.preprocess.augment:
            for a, b in augment(img.transpose(1, 2, 0), mp):
                pairs.append((a.transpose(2, 0, 1), b))
        else:
            pairs.append((img, mp))
    return pairs


def _fit_member(cfg, images, masks, seed):
    net = SatUnet(replace(cfg.unet, seed=seed))
    t = cfg.train
    hist = train(net, _training_pairs(cfg, images, masks),
                 TrainConfig(epochs=t.epochs, learning_rate=t.learning_rate, batch_size=t.batch_size,
                             momentum=t.momentum, dice_weight=t.dice_weight, seed=seed))
    return net, hist


def _predict_tiles(cfg, net, images):
    """Cropped (N, tile, tile) probability maps."""
    probs = net.predict(images)[:, 0]
    return np.stack([crop_image(p, cfg.preprocess.pad) for p in probs])


def _member_seed(cfg, target, k):
    return stage_seed(cfg.seed, f"train:{target}:{k}")


def _manifest(cfg, stage):
    path = cfg.out / "grid.csv"
    _require(stage, [path])
    return read_manifest(path)


# -- stages --------------------------------------------------------------

def _rasterize_cell(args):
    cfg, cell, layers = args
    tile = tile_raster(cell, cfg.grid.tile_px, cfg.grid.cell_km)
    out = {}
    for target, layer in layers.items():
        sub = clip_layer(layer, cell.bounds)
        out[target] = rasterize_layer(sub, tile, TARGET_MODES[target], width_px=cfg.rasterize.road_width_px,
                                      centroid_radius=cfg.rasterize.centroid_radius)
    return cell, out


def run_rasterize(cfg: PipelineConfig):
    stage = "rasterize"
    vec = cfg.path("vectors")
    _require(stage, [vec])
    layer = read_geojson(vec)
    layers = {"buildings": layer.of_class(cfg.rasterize.building_class),
              "roads": layer.of_class(cfg.rasterize.road_class)}
    cells = grid_cells(cfg)
    if not cells:
        raise StageError(stage, "config defines no grid regions", "bad_config")
    meta = provenance(cfg, stage)
    with Outputs() as outs:
        write_manifest(outs.add(cfg.out / "grid.csv"), cells, _comment(cfg, stage))
        for cell, rasters in _map(_rasterize_cell, [(cfg, c, layers) for c in cells], cfg.jobs):
            for target, r in rasters.items():
                write_png(outs.add(_mask_path(cfg, cell.cell_id, target)), r.values, r.transform, meta)
    return cells


def run_train(cfg: PipelineConfig):
    stage = "train"
    cells = _manifest(cfg, stage)
    _require(stage, [_tile_image_path(cfg, c.cell_id) for c in cells])
    _require(stage, [_mask_path(cfg, c.cell_id, t) for c in cells for t in cfg.train.targets])
    with Outputs() as outs:
        for target in cfg.train.targets:
            images, masks = _load_training_arrays(cfg, cells, target)
            for k in range(cfg.train.ensemble_size):
                seed = _member_seed(cfg, target, k)
                net, hist = _fit_member(cfg, images, masks, seed)
                meta = dict(provenance(cfg, stage), target=target, member=k, member_seed=seed)
                save_checkpoint(net, outs.add(cfg.out / "models" / f"{target}_m{k}.sunet"), meta)
                hist.write_csv(outs.add(cfg.out / "logs" / f"{target}_m{k}.csv"), _comment(cfg, stage))
                log.info("trained %s member %d: final loss %.4f", target, k, hist.loss[-1])


def run_judge(cfg: PipelineConfig):
    stage = "judge"
    cells = _manifest(cfg, stage)
    ids = [c.cell_id for c in cells]
    for target in cfg.judge.targets:
        if target not in cfg.train.targets:
            raise StageError(stage, f"judge target {target!r} is not trained", "bad_config")
    _require(stage, [cfg.out / "models" / f"{t}_m0.sunet" for t in cfg.judge.targets])
    _require(stage, [_tile_image_path(cfg, c.cell_id) for c in cells])
    histories = {}
    with Outputs() as outs:
        for target in cfg.judge.targets:
            images, masks = _load_training_arrays(cfg, cells, target)
            first, _ = load_checkpoint(cfg.out / "models" / f"{target}_m0.sunet")
            seed0 = _member_seed(cfg, target, 0)
            final, history = judge_mod.iterative_filter_train(
                images, masks, cfg.judge.rounds,
                train_fn=lambda im, ms: _fit_member(cfg, im, ms, seed0)[0],
                predict_fn=lambda net, im: _predict_tiles(cfg, net, im),
                alpha_max=cfg.judge.alpha_max, ids=ids, net=first, keep_undefined=cfg.judge.keep_undefined)
            for r, report in enumerate(history, start=1):
                report.write_csv(outs.add(cfg.out / "judge" / f"{target}_round{r}.csv"), _comment(cfg, stage))
            kept = set(history[-1].kept_ids)
            keep_idx = np.array([i for i, c in enumerate(ids) if c in kept])
            meta = dict(provenance(cfg, stage), target=target, kept=len(keep_idx))
            save_checkpoint(final, outs.add(cfg.out / "models" / f"{target}_judged_m0.sunet"), meta)
            for k in range(1, cfg.train.ensemble_size):
                net, _ = _fit_member(cfg, images[keep_idx], masks[keep_idx], _member_seed(cfg, target, k))
                save_checkpoint(net, outs.add(cfg.out / "models" / f"{target}_judged_m{k}.sunet"),
                                dict(meta, member=k))
            histories[target] = history
    return histories


def _model_paths(cfg, target):
    judged = target in cfg.judge.targets
    name = f"{target}_judged_m" if judged else f"{target}_m"
    return [cfg.out / "models" / f"{name}{k}.sunet" for k in range(cfg.train.ensemble_size)]


def run_predict(cfg: PipelineConfig):
    stage = "predict"
    cells = _manifest(cfg, stage)
    _require(stage, [p for t in cfg.train.targets for p in _model_paths(cfg, t)])
    _require(stage, [_tile_image_path(cfg, c.cell_id) for c in cells])
    images = np.stack([prepare_image(read_png(_tile_image_path(cfg, c.cell_id)), cfg) for c in cells])
    meta = provenance(cfg, stage)
    with Outputs() as outs:
        for target in cfg.train.targets:
            members = [_predict_tiles(cfg, load_checkpoint(p)[0], images) for p in _model_paths(cfg, target)]
            combined = pp.ensemble_combine(members)
            for cell, prob in zip(cells, combined):
                tile = tile_raster(cell, cfg.grid.tile_px, cfg.grid.cell_km)
                path = outs.add(cfg.out / "predictions" / f"{cell.cell_id}_{target}.png")
                write_png(path, pp.to_intensity(prob), tile.transform, meta)


def _pred_path(cfg, cell_id, target):
    return cfg.out / "predictions" / f"{cell_id}_{target}.png"


def _count_cell(args):
    cfg, cell, truth = args
    c = cfg.count
    tile = tile_raster(cell, cfg.grid.tile_px, cfg.grid.cell_km)
    row = {"cell_id": cell.cell_id, "buildings": math.nan, "road_m": math.nan,
           "road_components": math.nan, "nightlight": ""}
    metrics = []
    if "buildings" in cfg.train.targets:
        inten, tf = read_png_geo(_pred_path(cfg, cell.cell_id, "buildings"))
        row["buildings"] = len(pp.count_buildings(inten, c.threshold, c.min_blob_area))
        rings = []
        for f in truth.of_kind("polygon"):
            x, y = tf.to_pixel(f.coords[:, 0], f.coords[:, 1])
            ring = np.column_stack([x, y])
            cx, cy = polygon_centroid(ring)
            if 0 <= cx < tile.width and 0 <= cy < tile.height:
                rings.append(ring)
        metrics = pp.threshold_sweep(inten, rings, c.thresholds, c.min_blob_area, c.strict_matching)
    if "roads" in cfg.train.targets:
        inten = read_png(_pred_path(cfg, cell.cell_id, "roads"))
        skel = pp.skeletonize(pp.threshold_mask(inten, c.road_threshold))
        row["road_m"] = pp.road_length(skel, tile.meters_per_pixel)
        row["road_components"] = pp.component_count(skel)
    return row, metrics


def run_count(cfg: PipelineConfig):
    stage = "count"
    cells = _manifest(cfg, stage)
    _require(stage, [_pred_path(cfg, c.cell_id, t) for c in cells for t in cfg.train.targets])
    truth_path = cfg.path("truth_vectors") if cfg.paths.truth_vectors else cfg.path("vectors")
    _require(stage, [truth_path])
    buildings = read_geojson(truth_path).of_class(cfg.rasterize.building_class)
    results = _map(_count_cell, [(cfg, cell, clip_layer(buildings, cell.bounds)) for cell in cells], cfg.jobs)
    comment = _comment(cfg, stage)
    with Outputs() as outs:
        write_table(outs.add(cfg.out / "counts.csv"), COUNT_COLUMNS, [r for r, _ in results], comment)
        pooled = {}
        for (row, metrics) in results:
            rows = [dict(m.as_row(), cell_id=row["cell_id"]) for m in metrics]
            write_table(outs.add(cfg.out / "metrics" / f"{row['cell_id']}.csv"), METRIC_COLUMNS, rows, comment)
            for m in metrics:
                pooled[m.threshold] = pooled[m.threshold] + m if m.threshold in pooled else m
        if pooled:
            chosen = pp.select_threshold(list(pooled.values()))
            rows = [dict(m.as_row(), cell_id="ALL", selected=int(t == chosen)) for t, m in sorted(pooled.items())]
            write_table(outs.add(cfg.out / "count_summary.csv"), METRIC_COLUMNS + ["selected"], rows, comment)


def read_clusters(path):
    sites = []
    for r in read_table(path, CLUSTER_COLUMNS):
        def num(v):
            return float(v) if v not in ("", None) else math.nan
        sites.append(ClusterSite(r["cluster_id"], r["country"], float(r["lon"]), float(r["lat"]),
                                 num(r["wealth"]), num(r["wealthpooled"])))
    return sites


def run_features(cfg: PipelineConfig):
    stage = "features"
    cells = _manifest(cfg, stage)
    counts_path, clusters_path, nl_path = cfg.out / "counts.csv", cfg.path("clusters"), cfg.path("nightlight")
    _require(stage, [counts_path, clusters_path, nl_path])
    counts = {r["cell_id"]: r for r in read_table(counts_path, COUNT_COLUMNS)}
    nl_values, nl_tf = read_png_geo(nl_path)
    nl = MaskRaster(np.asarray(nl_values, dtype=np.float64), nl_tf, 1.0)
    cell_values, cell_rows = {}, []
    for cell in cells:
        if cell.cell_id not in counts:
            raise StageError(stage, f"counts.csv has no row for cell {cell.cell_id}", "schema_mismatch", counts_path)
        r = counts[cell.cell_id]
        light, covered = nightlight_stat(cell.bounds, nl)
        vals = {v: float(r[v]) for v in VARIABLES[:3]}
        vals["nightlight"] = light if covered else math.nan
        cell_values[cell.cell_id] = vals
        cell_rows.append(dict(vals, cell_id=cell.cell_id))
    ids = [c.cell_id for c in cells]
    centers = np.array([c.center for c in cells])
    q = list(cfg.features.quantiles)
    rows = []
    for site in read_clusters(clusters_path):
        row = cluster_features(site, cell_values, ids, centers, cfg.features.radius_km, q, cfg.features.min_cells)
        if row is not None:
            rows.append(row)
    cols = ["cluster_id", "country", "n_cells", "wealth", "wealthpooled"] + \
        [f"{v}_{s}" for v in VARIABLES for s in stat_names(q)]
    out_rows = [dict(r.values, cluster_id=r.cluster_id, country=r.country, n_cells=r.n_cells, **r.labels)
                for r in rows]
    comment = _comment(cfg, stage)
    with Outputs() as outs:
        write_table(outs.add(cfg.out / "cells.csv"), COUNT_COLUMNS, cell_rows, comment)
        write_table(outs.add(cfg.out / "features.csv"), cols, out_rows, comment)
    return rows


def read_feature_rows(path, quantiles):
    cols = [f"{v}_{s}" for v in VARIABLES for s in stat_names(quantiles)]
    rows = []
    for r in read_table(path, ["cluster_id", "country", "n_cells", "wealth", "wealthpooled"] + cols):
        rows.append(FeatureRow(r["cluster_id"], r["country"], {c: float(r[c]) for c in cols}, int(r["n_cells"]),
                               {"wealth": float(r["wealth"]), "wealthpooled": float(r["wealthpooled"])}))
    return rows


def run_benchmark(cfg: PipelineConfig):
    stage = "benchmark"
    path = cfg.out / "features.csv"
    _require(stage, [path])
    q = list(cfg.features.quantiles)
    rows = read_feature_rows(path, q)
    seed = stage_seed(cfg.seed, stage)
    specs = [ModelSpec.default(k, seed) for k in cfg.benchmark.models]
    comment = _comment(cfg, stage)
    tables = {}
    with Outputs() as outs:
        for label in cfg.benchmark.labels:
            results = []
            for fs in cfg.benchmark.feature_sets:
                X, y, countries, _, _ = build_matrix(rows, fs, label, q)
                for spec in specs:
                    res = loocv_by_country(X, y, countries, spec, fs)
                    if not res.audit():
                        raise StageError(stage, f"fold audit failed for {spec.kind}/{fs}", "audit_failure")
                    results.append(res)
            cvmod.write_table(results, outs.add(cfg.out / f"benchmark_{label}.csv"), comment)
            cvmod.write_by_country(results, outs.add(cfg.out / f"benchmark_{label}_by_country.csv"), comment)
            cvmod.write_audit(results, outs.add(cfg.out / f"benchmark_{label}_audit.csv"), comment)
            tables[label] = format_table(results, cfg.benchmark.feature_sets)
    return tables


RUNNERS = {
    "rasterize": run_rasterize,
    "train": run_train,
    "judge": run_judge,
    "predict": run_predict,
    "count": run_count,
    "features": run_features,
    "benchmark": run_benchmark,
}


def run_all(cfg: PipelineConfig):
    out = None
    for name in STAGES:
        log.info("stage %s", name)
        out = RUNNERS[name](cfg)
    return out
