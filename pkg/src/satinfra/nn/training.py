"""Mini-batch gradient descent on the hybrid loss."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .. import losses
from .unet import SatUnet

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.05
    batch_size: int = 8
    momentum: float = 0.0
    dice_weight: float = 1.0
    seed: int = 0


@dataclass
class TrainingLog:
    epochs: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    jaccard: list[float] = field(default_factory=list)

    def append(self, epoch, loss, jac):
        self.epochs.append(epoch)
        self.loss.append(loss)
        self.jaccard.append(jac)

    def rows(self):
        return list(zip(self.epochs, self.loss, self.jaccard))

    def write_csv(self, path, comment=None):
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "jaccard"])
            for e, l, j in self.rows():
                w.writerow([e, repr(float(l)), repr(float(j))])


def _stack(dataset):
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    images = np.stack([np.asarray(img) for img, _ in dataset])
    masks = np.stack([np.asarray(m).reshape(1, *np.asarray(m).shape[-2:]) for _, m in dataset])
    if images.shape[2:] != masks.shape[2:]:
        raise ValueError(f"image/mask shape mismatch: {images.shape} vs {masks.shape}")
    return images, (masks > 0).astype(np.float64)


def train(net: SatUnet, dataset, cfg: TrainConfig | None = None, **overrides) -> TrainingLog:
    """Train ``net`` in place on (image, mask) pairs.

    Images are (3, S, S) float arrays, masks (S, S) or (1, S, S) with
    nonzero meaning foreground. Shuffling and dropout are driven by
    ``cfg.seed`` only, so two runs with equal seeds give equal logs.
    The per-epoch Jaccard is pooled over the training-mode outputs of
    that epoch, thresholded at 0.5.
    """
    cfg = cfg or TrainConfig()
    for k, v in overrides.items():
        setattr(cfg, k, v)
    images, masks = _stack(dataset)
    n = len(images)
    rng = np.random.default_rng([cfg.seed, 7])
    net.reseed_dropout([cfg.seed, 11])
    velocity = {id(p): np.zeros_like(p) for _, p in net.parameters()}
    history = TrainingLog()

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total, inter, union = 0.0, 0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, y = images[idx], masks[idx]
            pred = net.forward(x, training=True)
            loss = losses.hybrid_loss(pred, y, cfg.dice_weight)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss!r} at epoch {epoch}, batch starting {start}")
            net.backward(losses.hybrid_loss_grad(pred, y, cfg.dice_weight))
            for (_, p), (_, g) in zip(net.parameters(), net.gradients()):
                if not np.all(np.isfinite(g)):
                    raise TrainingError(f"non-finite gradient at epoch {epoch}")
                if cfg.momentum:
                    v = velocity[id(p)]
                    v *= cfg.momentum
                    v -= cfg.learning_rate * g
                    p += v
                else:
                    p -= cfg.learning_rate * g
            total += loss * len(idx)
            hard = pred >= 0.5
            truth = y > 0
            inter += int(np.count_nonzero(hard & truth))
            union += int(np.count_nonzero(hard | truth))
        jac = inter / union if union else 1.0
        history.append(epoch, total / n, jac)
        log.debug("epoch %d loss %.5f jaccard %.4f", epoch, total / n, jac)
    return history


def evaluate_jaccard(net: SatUnet, images, masks, threshold=0.5):
    """Pixel-pooled Jaccard of thresholded inference outputs."""
    pred = net.predict(np.asarray(images)) >= threshold
    truth = np.asarray(masks).reshape(pred.shape) > 0
    return losses.jaccard(pred, truth)
