"""Cluster-level features: cells near each survey site, aggregated."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .rasterize import EARTH_RADIUS_KM, GeoBox, MaskRaster

log = logging.getLogger(__name__)

VARIABLES = ("buildings", "road_m", "road_components", "nightlight")
DEFAULT_QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)
DEFAULT_RADIUS_KM = 5.0

FEATURE_SETS = {
    "buildings": ("buildings",),
    "roads": ("road_m", "road_components"),
    "buildings_roads": ("buildings", "road_m", "road_components"),
    "nightlight": ("nightlight",),
    "all": ("buildings", "road_m", "road_components", "nightlight"),
}


@dataclass
class ClusterSite:
    cluster_id: str
    country: str
    lon: float
    lat: float
    wealth: float = math.nan
    wealthpooled: float = math.nan

    def __post_init__(self):
        if not (-180 <= self.lon <= 180 and -90 <= self.lat <= 90):
            raise ValueError(f"cluster {self.cluster_id}: invalid coordinates")
        if math.isnan(self.wealth) and math.isnan(self.wealthpooled):
            raise ValueError(f"cluster {self.cluster_id}: no wealth label")


def haversine_km(lon1, lat1, lon2, lat2):
    lon1, lat1, lon2, lat2 = (np.radians(np.asarray(v, dtype=np.float64)) for v in (lon1, lat1, lon2, lat2))
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def select_cells(site: ClusterSite, cell_ids, centers, radius_km=DEFAULT_RADIUS_KM):
    """Ids of cells whose centres lie within ``radius_km`` of the site.

    ``centers`` is an (n, 2) lon/lat array aligned with ``cell_ids``.
    """
    c = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    if len(c) == 0:
        return []
    d = haversine_km(site.lon, site.lat, c[:, 0], c[:, 1])
    return [cid for cid, ok in zip(cell_ids, d <= radius_km) if ok]


def stat_names(quantiles=DEFAULT_QUANTILES):
    return ["sum", "mean"] + [f"q{round(q * 100):02d}" for q in quantiles]


def aggregate(values, quantiles=DEFAULT_QUANTILES):
    """Sum, mean and linearly interpolated quantiles, keyed as in ``stat_names``."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot aggregate an empty list")
    out = {"sum": float(v.sum()), "mean": float(v.mean())}
    qs = np.quantile(v, quantiles, method="linear")
    for name, q in zip(stat_names(quantiles)[2:], qs):
        out[name] = float(q)
    return out


def nightlight_stat(bounds: GeoBox, raster: MaskRaster):
    """Mean raster value over pixels whose centres fall in ``bounds``.

    Returns (mean, covered); no overlap gives (0.0, False).
    """
    lon, lat = raster.pixel_centers_world()
    inside = bounds.contains(lon, lat)
    if not inside.any():
        return 0.0, False
    return float(np.asarray(raster.values, dtype=np.float64)[inside].mean()), True


@dataclass
class FeatureRow:
    cluster_id: str
    country: str
    values: dict  # "<var>_<stat>" -> float
    n_cells: int
    labels: dict = field(default_factory=dict)


def cluster_features(site, cell_values, cell_ids, centers, radius_km=DEFAULT_RADIUS_KM,
                     quantiles=DEFAULT_QUANTILES, min_cells=1, variables=VARIABLES):
    """FeatureRow for one site, or None (logged) when too few cells are nearby.

    ``cell_values`` maps cell id to a dict holding every name in ``variables``.
    """
    chosen = [c for c in select_cells(site, cell_ids, centers, radius_km) if c in cell_values]
    if len(chosen) < min_cells:
        log.info("dropping cluster %s: %d cells within %.1f km", site.cluster_id, len(chosen), radius_km)
        return None
    values = {}
    for var in variables:
        agg = aggregate([cell_values[c][var] for c in chosen], quantiles)
        for stat in stat_names(quantiles):
            values[f"{var}_{stat}"] = agg[stat]
    return FeatureRow(site.cluster_id, site.country, values, len(chosen),
                      {"wealth": site.wealth, "wealthpooled": site.wealthpooled})


def feature_columns(feature_set, quantiles=DEFAULT_QUANTILES):
    if feature_set not in FEATURE_SETS:
        raise ValueError(f"unknown feature set {feature_set!r}; choose from {sorted(FEATURE_SETS)}")
    return [f"{v}_{s}" for v in FEATURE_SETS[feature_set] for s in stat_names(quantiles)]


def build_matrix(rows, feature_set, label="wealth", quantiles=DEFAULT_QUANTILES):
    """(X, y, countries, cluster_ids, columns); rows with any missing value are dropped."""
    if label not in ("wealth", "wealthpooled"):
        raise ValueError("label must be 'wealth' or 'wealthpooled'")
    cols = feature_columns(feature_set, quantiles)
    X, y, countries, ids = [], [], [], []
    for r in rows:
        vals = [r.values.get(c, math.nan) for c in cols]
        target = r.labels.get(label, math.nan)
        if any(v is None or math.isnan(v) for v in vals) or target is None or math.isnan(target):
            log.info("dropping cluster %s from %s matrix: missing value", r.cluster_id, feature_set)
            continue
        X.append(vals)
        y.append(target)
        countries.append(r.country)
        ids.append(r.cluster_id)
    if not X:
        raise ValueError(f"no complete rows for feature set {feature_set!r}")
    return np.array(X, dtype=np.float64), np.array(y, dtype=np.float64), countries, ids, cols
