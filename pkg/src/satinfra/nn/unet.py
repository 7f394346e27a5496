"""Sat-Unet: a U-Net with batch-norm conv blocks, dropout and transposed-conv upsampling."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, asdict

import numpy as np

from .layers import (
    BatchNorm2d,
    Concat,
    Conv2d,
    ConvTranspose2x2,
    Dropout,
    Layer,
    MaxPool2x2,
    ReLU,
    Sequential,
    Sigmoid,
)

# Layer kinds that enter the reported layer count. The input layer and the
# output sigmoid are added on top; rectifiers are folded into their convs.
COUNTED_KINDS = ("batchnorm", "conv", "dropout", "pool", "tconv", "concat")


@dataclass
class UnetConfig:
    input_size: int = 416
    base_filters: int = 32
    depth: int = 5
    dropout_rate: float = 0.1
    seed: int = 0
    in_channels: int = 3
    bn_momentum: float = 0.9
    dtype: str = "float32"

    def validate(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_filters < 1:
            raise ValueError("base_filters must be >= 1")
        if self.input_size <= 0 or self.input_size % (2 ** self.depth):
            raise ValueError(
                f"input_size {self.input_size} is not divisible by 2**depth = {2 ** self.depth}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        np.dtype(self.dtype)

    @property
    def bottleneck_width(self):
        return self.base_filters * 2 ** self.depth

    def to_dict(self):
        return asdict(self)


def conv_block(in_ch, out_ch, dropout, rng, drop_rng, cfg):
    """batch-norm -> conv3x3 -> relu -> conv3x3 -> relu [-> dropout]."""
    dt = np.dtype(cfg.dtype)
    layers = [
        BatchNorm2d(in_ch, momentum=cfg.bn_momentum, dtype=dt),
        Conv2d(in_ch, out_ch, 3, rng=rng, dtype=dt),
        ReLU(),
        Conv2d(out_ch, out_ch, 3, rng=rng, dtype=dt),
        ReLU(),
    ]
    if dropout:
        layers.append(Dropout(cfg.dropout_rate, rng=drop_rng))
    return Sequential(layers)


class SatUnet:
    """Encoder/decoder network. Output is a (N, 1, S, S) probability map."""

    def __init__(self, config: UnetConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        # dropout masks draw from their own stream so they can be reseeded alone
        self.dropout_rng = np.random.default_rng([config.seed, 1])
        dt = np.dtype(config.dtype)
        f = config.base_filters

        self.encoders: list[tuple[Sequential, MaxPool2x2]] = []
        in_ch = config.in_channels
        for i in range(config.depth):
            width = f * 2 ** i
            block = conv_block(in_ch, width, dropout=i > 0, rng=rng,
                               drop_rng=self.dropout_rng, cfg=config)
            self.encoders.append((block, MaxPool2x2()))
            in_ch = width
        self.bottleneck = conv_block(in_ch, config.bottleneck_width, True, rng,
                                     self.dropout_rng, config)
        in_ch = config.bottleneck_width
        self.decoders: list[tuple[ConvTranspose2x2, Concat, Sequential]] = []
        for i in reversed(range(config.depth)):
            width = f * 2 ** i
            up = ConvTranspose2x2(in_ch, width, rng=rng, dtype=dt)
            block = conv_block(2 * width, width, True, rng, self.dropout_rng, config)
            self.decoders.append((up, Concat(), block))
            in_ch = width
        self.head = Conv2d(in_ch, 1, 1, rng=rng, dtype=dt)
        self.out = Sigmoid()
        self._forward_done = False

    # -- structure -------------------------------------------------------
    def layers(self) -> list[Layer]:
        """Leaf layers in declaration order."""
        out = []
        for block, pool in self.encoders:
            out += block.layers + [pool]
        out += self.bottleneck.layers
        for up, cat, block in self.decoders:
            out += [up, cat] + block.layers
        out += [self.head, self.out]
        return out

    def parameters(self):
        """(name, array) pairs in declaration order."""
        named = []
        for i, layer in enumerate(self.layers()):
            for k in sorted(layer.params):
                named.append((f"{i}.{layer.kind}.{k}", layer.params[k]))
        return named

    def batchnorms(self):
        return [layer for layer in self.layers() if isinstance(layer, BatchNorm2d)]

    def gradients(self):
        named = []
        for i, layer in enumerate(self.layers()):
            for k in sorted(layer.params):
                named.append((f"{i}.{layer.kind}.{k}", layer.grads[k]))
        return named

    def n_parameters(self):
        return sum(p.size for _, p in self.parameters())

    def layer_counts(self):
        counts = Counter(layer.kind for layer in self.layers() if layer.kind in COUNTED_KINDS)
        counts["input"] = 1
        counts["sigmoid"] = 1
        return dict(counts)

    def layer_count(self):
        return sum(self.layer_counts().values())

    def block_count(self):
        return len(self.encoders) + 1 + len(self.decoders)

    def reseed_dropout(self, seed):
        state = np.random.default_rng(seed).bit_generator.state
        self.dropout_rng.bit_generator.state = state

    # -- passes ----------------------------------------------------------
    def forward(self, batch, training=False):
        batch = np.asarray(batch)
        s, c = self.config.input_size, self.config.in_channels
        if batch.ndim != 4 or batch.shape[1:] != (c, s, s):
            raise ValueError(f"expected batch of shape (N, {c}, {s}, {s}), got {batch.shape}")
        h = batch.astype(np.dtype(self.config.dtype), copy=False)
        skips = []
        for block, pool in self.encoders:
            h = block.forward(h, training)
            skips.append(h)
            h = pool.forward(h, training)
        h = self.bottleneck.forward(h, training)
        for (up, cat, block), skip in zip(self.decoders, reversed(skips)):
            h = up.forward(h, training)
            h = cat.forward(h, skip, training)
            h = block.forward(h, training)
        h = self.head.forward(h, training)
        out = self.out.forward(h, training)
        self._forward_done = training
        return out

    def zero_grad(self):
        for layer in self.layers():
            layer.zero_grad()

    def backward(self, loss_grad):
        """Accumulate parameter gradients from dL/d(output); returns dL/d(input)."""
        if not self._forward_done:
            raise RuntimeError("backward requires a preceding forward pass with training=True")
        self.zero_grad()
        d = self.out.backward(np.asarray(loss_grad, dtype=np.dtype(self.config.dtype)))
        d = self.head.backward(d)
        skip_grads = []
        for up, cat, block in reversed(self.decoders):
            d = block.backward(d)
            d, dskip = cat.backward(d)
            skip_grads.append(dskip)
            d = up.backward(d)
        d = self.bottleneck.backward(d)
        for (block, pool), dskip in zip(reversed(self.encoders), reversed(skip_grads)):
            d = pool.backward(d) + dskip
            d = block.backward(d)
        return d

    def predict(self, batch, batch_size=8):
        """Inference in chunks; deterministic for fixed parameters."""
        batch = np.asarray(batch)
        outs = [self.forward(batch[i:i + batch_size], training=False)
                for i in range(0, len(batch), batch_size)]
        return np.concatenate(outs, axis=0)


def build_sat_unet(config: UnetConfig) -> SatUnet:
    return SatUnet(config)
