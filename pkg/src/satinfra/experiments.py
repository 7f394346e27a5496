"""Synthetic experiments shared by the acceptance suite and ``scripts/``.

Each function returns plain numbers so callers can print, gate or plot them.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .benchmark import default_specs, loocv_by_country
from .features import build_matrix
from .judge import iterative_filter_train
from .nn import TrainConfig, UnetConfig, build_sat_unet, evaluate_jaccard, train
from .synthetic import benchmark_rows, corrupted_label_corpus, ensemble_trial, shape_dataset


@dataclass
class ToySegmentation:
    jaccard: float
    final_loss: float
    seconds: float


def toy_segmentation(seed=0, n_train=64, n_test=16, size=64, epochs=300, learning_rate=0.05, batch_size=8):
    """Train a depth-2 network on shape images and score it on held-out ones."""
    data = shape_dataset(n_train + n_test, size, seed)
    net = build_sat_unet(UnetConfig(input_size=size, base_filters=4, depth=2, seed=seed, dtype="float32"))
    t0 = time.perf_counter()
    hist = train(net, data[:n_train], TrainConfig(epochs=epochs, learning_rate=learning_rate,
                                                  batch_size=batch_size, seed=seed))
    test = data[n_train:]
    jac = evaluate_jaccard(net, np.stack([x for x, _ in test]), np.stack([m for _, m in test]))
    return ToySegmentation(jac, hist.loss[-1], time.perf_counter() - t0)


@dataclass
class JudgeRecovery:
    recall: float  # corrupted labels found in the dropped set
    false_drop: float  # clean labels dropped
    kept_sizes: list
    seconds: float


def judge_recovery(seed=0, n=80, size=32, epochs=30, rounds=2, alpha_max=1.5, corrupt_frac=0.3):
    images, labels, _, corrupted = corrupted_label_corpus(n, size, seed, corrupt_frac)
    ucfg = UnetConfig(input_size=size, base_filters=4, depth=2, seed=seed, dtype="float32")
    tcfg = TrainConfig(epochs=epochs, learning_rate=0.05, batch_size=8, seed=seed)

    def train_fn(x, m):
        net = build_sat_unet(ucfg)
        train(net, list(zip(x, m)), tcfg)
        return net

    def predict_fn(net, x):
        return net.predict(x)[:, 0]

    t0 = time.perf_counter()
    _, hist = iterative_filter_train(images, labels, rounds, train_fn, predict_fn, alpha_max=alpha_max)
    kept = set(hist[-1].kept_ids)
    dropped = set(range(n)) - kept
    bad = set(np.flatnonzero(corrupted).tolist())
    return JudgeRecovery(len(bad & dropped) / len(bad), len(dropped - bad) / (n - len(bad)),
                         [len(h.kept_ids) for h in hist], time.perf_counter() - t0)


def ensemble_gain(trials=100, members=3):
    """Number of trials where the ensemble scores at least the median member."""
    wins = 0
    for seed in range(trials):
        combined, singles = ensemble_trial(seed, members=members)
        wins += combined >= np.median(singles)
    return wins


FEATURE_SETS = ("buildings", "roads", "buildings_roads", "nightlight", "all")


def benchmark_table(seed=0, label="wealthpooled", feature_sets=FEATURE_SETS, kinds=None):
    """LOOCV results on synthetic cluster rows, one per (model, feature set)."""
    rows = benchmark_rows(seed=seed)
    specs = [s for s in default_specs(seed) if kinds is None or s.kind in kinds]
    out = []
    for fs in feature_sets:
        X, y, countries, _, _ = build_matrix(rows, fs, label)
        for spec in specs:
            out.append(loocv_by_country(X, y, countries, spec, fs))
    return out
