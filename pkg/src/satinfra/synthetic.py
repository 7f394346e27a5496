"""Synthetic scenes for tests, experiments and the bundled pipeline fixture.

Nothing here pretends to be real imagery. Scenes are built so that the
quantities each pipeline stage measures (object masses, counts, road
lengths, cluster wealth) are known exactly.
"""
from __future__ import annotations

import numpy as np

from .losses import jaccard
from .postprocess import ensemble_combine, threshold_mask
from .rasterize import rescale_colors

BACKGROUND = np.array([118.0, 104.0, 82.0])
ROOF = np.array([205.0, 196.0, 188.0])
ROAD = np.array([64.0, 64.0, 70.0])


def _disc(mask, cy, cx, r):
    yy, xx = np.ogrid[:mask.shape[0], :mask.shape[1]]
    mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def shape_mask(size, rng, n_objects=None, min_r=3, max_r=8):
    """Boolean mask with a few non-overlapping-ish rectangles and discs."""
    mask = np.zeros((size, size), dtype=bool)
    n = rng.integers(1, 5) if n_objects is None else n_objects
    for _ in range(n):
        r = int(rng.integers(min_r, max_r + 1))
        cy, cx = rng.integers(r, size - r, size=2)
        if rng.random() < 0.5:
            _disc(mask, cy, cx, r)
        else:
            h, w = rng.integers(min_r, max_r + 1, size=2)
            mask[max(cy - h, 0):cy + h, max(cx - w, 0):cx + w] = True
    return mask


def render(mask, rng, noise=18.0, roads=None):
    """RGB uint8 image (H, W, 3) painting ``mask`` as roofs over textured ground."""
    h, w = mask.shape
    img = BACKGROUND + rng.normal(0.0, noise, size=(h, w, 3))
    # low-frequency ground texture
    coarse = rng.normal(0.0, noise, size=(h // 8 + 1, w // 8 + 1, 3))
    img += np.kron(coarse, np.ones((8, 8, 1)))[:h, :w]
    if roads is not None:
        img[roads] = ROAD + rng.normal(0.0, noise * 0.5, size=(int(roads.sum()), 3))
    img[mask] = ROOF + rng.normal(0.0, noise * 0.7, size=(int(mask.sum()), 3))
    # the imagery is dull: rescaling channel maxima is part of preprocessing
    return np.clip(img * 0.72, 0, 255).astype(np.uint8)


def shape_dataset(n, size, seed, noise=18.0):
    """``n`` (image (3,S,S) float in [0,1], mask (S,S) uint8) pairs."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        m = shape_mask(size, rng)
        img = rescale_colors(render(m, rng, noise))
        out.append((img.transpose(2, 0, 1).astype(np.float32) / 255.0, m.astype(np.uint8)))
    return out


def blob_scene(size, rng, n_blobs, radius=3):
    """Mask of ``n_blobs`` discs at well separated random centres, plus the centres."""
    mask = np.zeros((size, size), dtype=bool)
    centres = []
    tries = 0
    while len(centres) < n_blobs and tries < 1000:
        tries += 1
        c = rng.integers(radius + 1, size - radius - 1, size=2)
        if all(np.hypot(*(c - o)) > 2 * radius + 3 for o in centres):
            centres.append(c)
            _disc(mask, c[0], c[1], radius)
    return mask, np.array(centres)


def corrupted_label_corpus(n, size, seed, corrupt_frac=0.3, n_blobs=(4, 9), radius=3, noise=18.0):
    """Image/label pairs where a fraction of labels lost half their objects.

    Returns (images (N,3,S,S) float, labels (N,S,S) uint8, truths (N,S,S)
    uint8, corrupted (N,) bool). Corrupted indices are an exact
    ``round(corrupt_frac * n)`` subset.
    """
    rng = np.random.default_rng(seed)
    corrupted = np.zeros(n, dtype=bool)
    corrupted[rng.choice(n, size=int(round(corrupt_frac * n)), replace=False)] = True
    images, labels, truths = [], [], []
    for i in range(n):
        k = int(rng.integers(n_blobs[0], n_blobs[1] + 1))
        truth, centres = blob_scene(size, rng, k, radius)
        k = len(centres)
        label = truth.copy()
        if corrupted[i]:
            label[:] = False
            keep = rng.permutation(k)[: k - k // 2]
            for c in centres[keep]:
                _disc(label, c[0], c[1], radius)
        img = rescale_colors(render(truth, rng, noise))
        images.append(img.transpose(2, 0, 1).astype(np.float32) / 255.0)
        labels.append(label.astype(np.uint8))
        truths.append(truth.astype(np.uint8))
    return np.stack(images), np.stack(labels), np.stack(truths), corrupted


def benchmark_rows(n_countries=4, per_country=80, cells=10, seed=0, quantiles=(0.1, 0.25, 0.5, 0.75, 0.9)):
    """FeatureRows whose wealth drives every source through independent noise.

    Each source sees the latent level through its own noise, so combining
    sources should predict wealth at least as well as any single one.
    """
    from .features import VARIABLES, FeatureRow, aggregate, stat_names

    rng = np.random.default_rng(seed)
    rows = []
    for ci in range(n_countries):
        country = f"C{ci}"
        mu = rng.normal(0.0, 0.7)
        levels = rng.normal(mu, 1.0, size=per_country)
        for k, z in enumerate(levels):
            dev = z + rng.normal(0.0, 0.4, size=cells)
            src = {
                "buildings": rng.poisson(np.exp(1.5 + 0.5 * (dev + rng.normal(0, 0.9, cells)))),
                "road_m": 400.0 * np.logaddexp(0.0, dev + rng.normal(0, 0.9, cells)),
                "road_components": rng.poisson(1.0 + np.logaddexp(0.0, dev + rng.normal(0, 0.9, cells))),
                "nightlight": np.clip(30.0 * (dev + rng.normal(0, 0.9, cells)) + 40.0, 0.0, 255.0),
            }
            values = {}
            for var in VARIABLES:
                agg = aggregate(src[var], quantiles)
                values.update({f"{var}_{s}": agg[s] for s in stat_names(quantiles)})
            rows.append(FeatureRow(f"{country}-{k:04d}", country, values, cells,
                                   {"wealthpooled": float(z), "wealth": float(z - mu)}))
    return rows


def ensemble_trial(seed, size=64, members=3, noise=110.0, threshold=127.5):
    """Jaccard of a thresholded ensemble and of each noisy member against the truth.

    Members are the truth mask at intensity 255 plus independent Gaussian
    noise, clipped to 0-255.
    """
    rng = np.random.default_rng(seed)
    truth = shape_mask(size, rng)
    base = truth.astype(np.float64) * 255.0
    preds = [np.clip(base + rng.normal(0.0, noise, base.shape), 0, 255) for _ in range(members)]
    singles = [jaccard(threshold_mask(p, threshold), truth) for p in preds]
    combined = jaccard(threshold_mask(ensemble_combine(preds), threshold), truth)
    return combined, singles
