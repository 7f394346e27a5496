"""Label filtering by validity index.

The validity index of a (prediction, reference) pair is the ratio of
predicted mask mass to reference mask mass. A value well above one means
the model sees structure the label does not have, which is how
incomplete OpenStreetMap labels show up. Those pairs are dropped and the
model is retrained on what is left.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_ALPHA_MAX = 1.5
UNDEFINED = math.nan


class EmptyKeptSetError(RuntimeError):
    pass


def validity_index(predicted, reference):
    """Sum of predicted pixel values over sum of reference pixel values.

    Returns ``nan`` (undefined) when the reference is empty. Both masks
    must be on the same scale; no normalisation happens here.
    """
    p = np.asarray(predicted, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if p.shape != r.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {r.shape}")
    denom = r.sum()
    if denom <= 0:
        return UNDEFINED
    return float(p.sum() / denom)


@dataclass
class FilterReport:
    ids: list
    alphas: list[float]
    kept: list[bool]
    alpha_max: float
    review: list = field(default_factory=list)  # ids whose index was undefined

    @property
    def kept_ids(self):
        return [i for i, k in zip(self.ids, self.kept) if k]

    @property
    def dropped_ids(self):
        return [i for i, k in zip(self.ids, self.kept) if not k]

    @property
    def drop_fraction(self):
        return 0.0 if not self.ids else 1.0 - sum(self.kept) / len(self.ids)

    def write_csv(self, path, comment=None):
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell_id", "alpha", "kept"])
            for i, a, k in zip(self.ids, self.alphas, self.kept):
                w.writerow([i, "undefined" if math.isnan(a) else repr(a), int(k)])
            fh.write(f"# summary: n={len(self.ids)} kept={sum(self.kept)} "
                     f"dropped={len(self.ids) - sum(self.kept)} drop_fraction={self.drop_fraction!r} "
                     f"alpha_max={self.alpha_max!r} undefined={len(self.review)}\n")


def filter_by_alpha(ids, alphas, alpha_max=DEFAULT_ALPHA_MAX, keep_undefined=False):
    kept, review = [], []
    for i, a in zip(ids, alphas):
        if math.isnan(a):
            review.append(i)
            kept.append(bool(keep_undefined))
        else:
            kept.append(a <= alpha_max)
    return FilterReport(list(ids), [float(a) for a in alphas], kept, alpha_max, review)


def filter_dataset(pairs, alpha_max=DEFAULT_ALPHA_MAX, ids=None, keep_undefined=False):
    """Score (predicted, reference) pairs and drop those with index above ``alpha_max``."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no mask pairs to filter")
    ids = list(range(len(pairs))) if ids is None else list(ids)
    alphas = [validity_index(p, r) for p, r in pairs]
    return filter_by_alpha(ids, alphas, alpha_max, keep_undefined)


def calibrate_alpha_max(alphas, drop_fraction=0.4):
    """Smallest cutoff that drops about ``drop_fraction`` of the defined indices."""
    a = np.sort(np.asarray([x for x in alphas if not math.isnan(x)], dtype=np.float64))
    if len(a) == 0:
        raise ValueError("no defined indices to calibrate on")
    n_keep = int(round((1.0 - drop_fraction) * len(a)))
    if n_keep <= 0:
        return float(np.nextafter(a[0], -np.inf))
    return float(a[n_keep - 1])


def iterative_filter_train(images, masks, rounds, train_fn, predict_fn, alpha_max=DEFAULT_ALPHA_MAX,
                           ids=None, net=None, keep_undefined=False):
    """Train, score, filter and retrain ``rounds`` times.

    ``train_fn(images, masks)`` returns a trained network and
    ``predict_fn(net, images)`` returns (N, H, W) probability maps on the
    same scale as ``masks``. Passing ``net`` reuses an already trained
    first-round model. Returns (final network, list of per-round reports);
    each round scores only the pairs kept by the previous round.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    images = np.asarray(images)
    masks = np.asarray(masks)
    ids = list(range(len(images))) if ids is None else list(ids)
    keep_idx = np.arange(len(images))
    history = []
    changed = True
    for r in range(1, rounds + 1):
        if net is None or changed and r > 1:
            net = train_fn(images[keep_idx], masks[keep_idx])
        preds = predict_fn(net, images[keep_idx])
        alphas = [validity_index(p, m) for p, m in zip(preds, masks[keep_idx])]
        report = filter_by_alpha([ids[i] for i in keep_idx], alphas, alpha_max, keep_undefined)
        history.append(report)
        new_keep = keep_idx[np.asarray(report.kept, dtype=bool)]
        log.info("round %d: kept %d of %d", r, len(new_keep), len(keep_idx))
        if len(new_keep) == 0:
            raise EmptyKeptSetError(f"round {r} dropped every remaining pair (alpha_max={alpha_max})")
        changed = len(new_keep) != len(keep_idx)
        keep_idx = new_keep
    if changed:
        net = train_fn(images[keep_idx], masks[keep_idx])
    return net, history
