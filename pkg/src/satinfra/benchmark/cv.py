"""Leave-one-country-out cross-validation and R-squared tables."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .models import BaggedTrees, BoostedTrees, RegressionTree, Ridge

MODEL_KINDS = ("ridge", "rtree", "rtree_boosted", "rtree_bagged")

# Frozen "default settings"; never tuned.
DEFAULTS = {
    "ridge": {"lam": 1.0},
    "rtree": {"max_depth": 8, "min_leaf": 5},
    "rtree_boosted": {"n_rounds": 100, "learning_rate": 0.1, "max_depth": 3, "min_leaf": 5},
    "rtree_bagged": {"n_trees": 100, "bootstrap": True, "max_depth": 8, "min_leaf": 5},
}

LABELS = {"ridge": "ridge", "rtree": "r-tree", "rtree_boosted": "r-tree (bs)", "rtree_bagged": "r-tree (bg)"}


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    params: tuple = ()  # sorted (name, value) pairs
    seed: int = 0

    @classmethod
    def default(cls, kind, seed=0, **overrides):
        if kind not in DEFAULTS:
            raise ValueError(f"unknown model kind {kind!r}")
        params = dict(DEFAULTS[kind], **overrides)
        return cls(kind, tuple(sorted(params.items())), seed)

    def build(self):
        p = dict(self.params)
        if self.kind == "ridge":
            return Ridge(**p)
        if self.kind == "rtree":
            return RegressionTree(**p)
        if self.kind == "rtree_boosted":
            return BoostedTrees(**p)
        if self.kind == "rtree_bagged":
            return BaggedTrees(seed=self.seed, **p)
        raise ValueError(f"unknown model kind {self.kind!r}")


def default_specs(seed=0):
    return [ModelSpec.default(k, seed) for k in MODEL_KINDS]


def r_squared(y_true, y_pred):
    """``1 - SSE/SST``; may be negative."""
    y = np.asarray(y_true, dtype=np.float64)
    p = np.asarray(y_pred, dtype=np.float64)
    if y.shape != p.shape or len(y) < 2:
        raise ValueError("need two equal-length arrays of at least 2 values")
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0:
        raise ValueError("r_squared undefined for zero-variance truth")
    return 1.0 - float(np.sum((y - p) ** 2)) / sst


@dataclass
class FoldRecord:
    held_out: str
    train_countries: tuple
    rows: tuple


@dataclass
class CvResult:
    spec: ModelSpec
    feature_set: str
    predictions: np.ndarray
    y: np.ndarray
    countries: list
    folds: list[FoldRecord] = field(default_factory=list)

    @property
    def r2_pooled(self):
        return r_squared(self.y, self.predictions)

    def r2_by_country(self):
        out = {}
        c = np.asarray(self.countries)
        for country in sorted(set(self.countries)):
            m = c == country
            try:
                out[country] = r_squared(self.y[m], self.predictions[m])
            except ValueError:
                out[country] = math.nan
        return out

    def audit(self):
        """True when every row was predicted once, by a model that never saw its country."""
        seen = np.zeros(len(self.y), dtype=int)
        for fold in self.folds:
            if fold.held_out in fold.train_countries:
                return False
            for r in fold.rows:
                if self.countries[r] != fold.held_out or self.countries[r] in fold.train_countries:
                    return False
                seen[r] += 1
        return bool(np.all(seen == 1))


def loocv_by_country(X, y, countries, spec: ModelSpec, feature_set=""):
    """Predict every country with a model trained on all the others."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    countries = list(countries)
    groups = sorted(set(countries))
    if len(groups) < 2:
        raise ValueError("leave-one-country-out needs at least two countries")
    c = np.asarray(countries)
    preds = np.full(len(y), np.nan)
    folds = []
    for g in groups:
        test = c == g
        if not test.any():
            raise ValueError(f"country {g} has no rows")
        train = ~test
        model = spec.build().fit(X[train], y[train])
        preds[test] = model.predict(X[test])
        folds.append(FoldRecord(g, tuple(sorted(set(c[train]))), tuple(np.flatnonzero(test).tolist())))
    return CvResult(spec, feature_set, preds, y, countries, folds)


def write_table(results, path, comment=None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "feature_set", "r2_pooled"])
        for r in results:
            w.writerow([r.spec.kind, r.feature_set, f"{r.r2_pooled:.6f}"])


def write_by_country(results, path, comment=None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "feature_set", "country", "n", "r2"])
        for r in results:
            counts = {k: r.countries.count(k) for k in set(r.countries)}
            for country, r2 in r.r2_by_country().items():
                w.writerow([r.spec.kind, r.feature_set, country, counts[country],
                            "nan" if math.isnan(r2) else f"{r2:.6f}"])


def write_audit(results, path, comment=None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "feature_set", "held_out", "train_countries", "n_rows", "clean"])
        for r in results:
            for f in r.folds:
                w.writerow([r.spec.kind, r.feature_set, f.held_out, ";".join(f.train_countries), len(f.rows),
                            int(f.held_out not in f.train_countries)])


def format_table(results, feature_sets):
    """Plain-text models x feature-sets grid of pooled R-squared."""
    grid = {(r.spec.kind, r.feature_set): r.r2_pooled for r in results}
    kinds = list(dict.fromkeys(r.spec.kind for r in results))
    width = max(len(LABELS.get(k, k)) for k in kinds) + 2
    lines = ["Model".ljust(width) + "".join(f"{fs:>17}" for fs in feature_sets)]
    for k in kinds:
        lines.append(LABELS.get(k, k).ljust(width) + "".join(
            f"{grid.get((k, fs), math.nan):17.3f}" for fs in feature_sets))
    return "\n".join(lines)
