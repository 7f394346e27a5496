"""From probability masks to object counts and road measurements."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .rasterize import point_in_polygon, polygon_centroid

EIGHT = np.ones((3, 3), dtype=bool)
DEFAULT_MIN_BLOB_AREA = 4
TABLE_THRESHOLDS = (5, 10, 15, 25)


def threshold_mask(prob, t):
    """Binary mask of pixels with intensity strictly above ``t`` (0-255 scale)."""
    if not 0 <= t <= 255:
        raise ValueError("threshold must lie in [0, 255]")
    return np.asarray(prob) > t


def to_intensity(prob):
    """Probability map in [0, 1] to 0-255 intensities (float)."""
    return np.asarray(prob, dtype=np.float64) * 255.0


# -- components ----------------------------------------------------------

@dataclass
class Blob:
    pixels: np.ndarray  # (k, 2) row, col
    centroid: tuple[float, float]  # row, col
    area: int


def connected_components(mask, min_blob_area=DEFAULT_MIN_BLOB_AREA):
    """8-connected components with at least ``min_blob_area`` pixels, in label order."""
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT)
    if n == 0:
        return []
    order = np.argsort(labels, axis=None, kind="stable")
    flat = labels.ravel()[order]
    starts = np.searchsorted(flat, np.arange(1, n + 2))
    cols = labels.shape[1]
    blobs = []
    for k in range(n):
        idx = order[starts[k]:starts[k + 1]]
        if len(idx) < min_blob_area:
            continue
        pix = np.column_stack(np.divmod(idx, cols))
        blobs.append(Blob(pix, (float(pix[:, 0].mean()), float(pix[:, 1].mean())), len(idx)))
    return blobs


def blob_points_xy(blobs):
    """Blob centroids as continuous pixel-space (x, y) points."""
    if not blobs:
        return np.zeros((0, 2))
    return np.array([(b.centroid[1] + 0.5, b.centroid[0] + 0.5) for b in blobs])


# -- counting metrics ----------------------------------------------------

@dataclass
class CountMetrics:
    threshold: float
    tp_count: int
    total_pred: int
    total_truth: int
    tp_any: int = 0  # predictions inside any outline, without one-per-building matching

    @property
    def tp_rate(self):
        """Matched buildings as a percentage of ground-truth buildings."""
        return math.nan if self.total_truth == 0 else 100.0 * self.tp_count / self.total_truth

    @property
    def pred_to_mask(self):
        return math.nan if self.total_truth == 0 else 100.0 * self.total_pred / self.total_truth

    @property
    def fp_rate(self):
        if self.total_pred == 0:
            return math.nan
        return 100.0 * (self.total_pred - self.tp_count) / self.total_pred

    def __add__(self, other):
        if self.threshold != other.threshold:
            raise ValueError("cannot pool metrics taken at different thresholds")
        return CountMetrics(self.threshold, self.tp_count + other.tp_count,
                            self.total_pred + other.total_pred, self.total_truth + other.total_truth,
                            self.tp_any + other.tp_any)

    def as_row(self):
        return {"threshold": self.threshold, "tp_count": self.tp_count, "total_pred": self.total_pred,
                "total_truth": self.total_truth, "tp_rate": self.tp_rate,
                "pred_to_mask": self.pred_to_mask, "fp_rate": self.fp_rate, "tp_any": self.tp_any}


def match_centroids(points, polygons, strict=True):
    """Indices (pred, polygon) of true-positive matches.

    A prediction is a hit when it lies inside a polygon. In strict mode a
    polygon absorbs at most one prediction, assigned greedily by distance
    to the polygon centroid; otherwise every inside prediction counts.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0 or len(polygons) == 0:
        return []
    cand = []
    for j, ring in enumerate(polygons):
        inside = np.flatnonzero(point_in_polygon(pts, ring))
        if len(inside):
            cx, cy = polygon_centroid(ring)
            for i in inside:
                cand.append((math.hypot(pts[i, 0] - cx, pts[i, 1] - cy), int(i), j))
    if not strict:
        seen = {}
        for _, i, j in sorted(cand):
            seen.setdefault(i, j)
        return sorted(seen.items())
    cand.sort()
    used_p, used_g, out = set(), set(), []
    for _, i, j in cand:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        out.append((i, j))
    return sorted(out)


def contour_in_contour_eval(points, polygons, threshold=math.nan, strict=True):
    """CountMetrics for predicted centroids against ground-truth building outlines."""
    loose = match_centroids(points, polygons, strict=False)
    tp = len(match_centroids(points, polygons, strict=True)) if strict else len(loose)
    return CountMetrics(threshold, tp, len(np.asarray(points).reshape(-1, 2)), len(polygons), len(loose))


def count_buildings(intensity, t, min_blob_area=DEFAULT_MIN_BLOB_AREA):
    return connected_components(threshold_mask(intensity, t), min_blob_area)


def threshold_sweep(intensity, polygons, thresholds=TABLE_THRESHOLDS, min_blob_area=DEFAULT_MIN_BLOB_AREA,
                    strict=True):
    """One CountMetrics per threshold; ``polygons`` are pixel-space (x, y) rings."""
    thresholds = list(thresholds)
    if thresholds != sorted(thresholds):
        raise ValueError("thresholds must be sorted ascending")
    out = []
    for t in thresholds:
        pts = blob_points_xy(count_buildings(intensity, t, min_blob_area))
        out.append(contour_in_contour_eval(pts, polygons, t, strict))
    return out


def select_threshold(metrics, max_fp=None, min_tp=None):
    """Threshold whose Pred-To-Mask is closest to 100.

    Candidates violating ``max_fp`` / ``min_tp`` are skipped unless that
    leaves nothing. Ties go to the higher TP rate, then the lower threshold.
    """
    def ok(m):
        if max_fp is not None and not (m.fp_rate <= max_fp):
            return False
        if min_tp is not None and not (m.tp_rate >= min_tp):
            return False
        return not math.isnan(m.pred_to_mask)

    pool = [m for m in metrics if ok(m)] or [m for m in metrics if not math.isnan(m.pred_to_mask)] or list(metrics)
    if not pool:
        raise ValueError("no metrics to select from")

    def key(m):
        d = abs(m.pred_to_mask - 100.0) if not math.isnan(m.pred_to_mask) else math.inf
        tp = m.tp_rate if not math.isnan(m.tp_rate) else -math.inf
        return (d, -tp, m.threshold)

    return min(pool, key=key).threshold


# -- ensembling ----------------------------------------------------------

def ensemble_combine(masks):
    """Pixel-wise mean of equally shaped masks."""
    masks = [np.asarray(m, dtype=np.float64) for m in masks]
    if not masks:
        raise ValueError("need at least one mask")
    shape = masks[0].shape
    for m in masks[1:]:
        if m.shape != shape:
            raise ValueError(f"mask shape mismatch: {m.shape} vs {shape}")
    # Sorting per pixel makes the sum independent of argument order, and
    # averaging offsets from the minimum returns identical inputs unchanged.
    stack = np.sort(np.stack(masks), axis=0)
    lo = stack[0]
    return lo + (stack - lo).sum(axis=0) / len(masks)


# -- skeletons -----------------------------------------------------------

def _neighbours(p):
    """P2..P9 (N, NE, E, SE, S, SW, W, NW) of every interior pixel of padded ``p``."""
    return [p[:-2, 1:-1], p[:-2, 2:], p[1:-1, 2:], p[2:, 2:],
            p[2:, 1:-1], p[2:, :-2], p[1:-1, :-2], p[:-2, :-2]]


def _candidates(img, step):
    p = np.pad(img, 1).astype(np.uint8)
    n = _neighbours(p)
    b = sum(n)
    a = sum(((n[i] == 0) & (n[(i + 1) % 8] == 1)).astype(np.uint8) for i in range(8))
    p2, p4, p6, p8 = n[0], n[2], n[4], n[6]
    if step == 0:
        c3, c4 = p2 * p4 * p6, p4 * p6 * p8
    else:
        c3, c4 = p2 * p4 * p8, p2 * p6 * p8
    return img & (b >= 2) & (b <= 6) & (a == 1) & (c3 == 0) & (c4 == 0)


def _deletable_at(img, r, c, step):
    win = np.zeros((3, 3), dtype=bool)
    r0, r1 = max(r - 1, 0), min(r + 2, img.shape[0])
    c0, c1 = max(c - 1, 0), min(c + 2, img.shape[1])
    win[r0 - r + 1:r1 - r + 1, c0 - c + 1:c1 - c + 1] = img[r0:r1, c0:c1]
    return bool(_candidates(win, step)[1, 1])


def _thin_step(img, step):
    cand = _candidates(img, step)
    if not cand.any():
        return img, False
    new = img & ~cand
    old_lab, n_old = ndimage.label(img, structure=EIGHT)
    new_lab, _ = ndimage.label(new, structure=EIGHT)
    # each old component must map to exactly one new component
    pairs = np.unique(np.column_stack([old_lab[img], new_lab[img]]), axis=0)
    pairs = pairs[pairs[:, 1] > 0]
    counts = np.bincount(pairs[:, 0], minlength=n_old + 1)
    bad = np.flatnonzero(counts[1:] != 1) + 1
    if len(bad):
        bad_mask = np.isin(old_lab, bad)
        new = new | (img & bad_mask)
        # sequential deletion keeps the run of neighbours connected
        for r, c in np.argwhere(cand & bad_mask):
            if _deletable_at(new, r, c, step):
                new[r, c] = False
    return new, bool((new != img).any())


def skeletonize(mask):
    """Zhang-Suen thinning that never splits or removes a component.

    Parallel deletions that would disconnect or erase an 8-connected
    component (a 2x2 block, for instance) are redone sequentially for
    that component only.
    """
    img = np.asarray(mask).astype(bool).copy()
    while True:
        img, ch1 = _thin_step(img, 0)
        img, ch2 = _thin_step(img, 1)
        if not (ch1 or ch2):
            return img


def road_length(skeleton, meters_per_pixel=1.0):
    """Length of a thin skeleton: rook steps count 1, diagonal steps sqrt(2).

    A diagonal step is skipped when a rook path already joins the two
    pixels, so corners of a staircase are not counted twice.
    """
    s = np.asarray(skeleton).astype(bool)
    rook = np.count_nonzero(s[:, :-1] & s[:, 1:]) + np.count_nonzero(s[:-1, :] & s[1:, :])
    a, b = s[:-1, :-1], s[1:, 1:]
    c, d = s[:-1, 1:], s[1:, :-1]
    diag_main = a & b & ~c & ~d
    diag_anti = c & d & ~a & ~b
    diag = np.count_nonzero(diag_main) + np.count_nonzero(diag_anti)
    return (rook + math.sqrt(2.0) * diag) * meters_per_pixel


def component_count(mask):
    return int(ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT)[1])
