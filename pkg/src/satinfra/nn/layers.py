"""Layer primitives with explicit forward and backward passes.

Every layer works on NCHW numpy arrays. ``forward`` caches whatever the
matching ``backward`` needs, so a backward call is only valid after a
forward call with ``training=True``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def _require_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a stored forward pass")
        return self._cache

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


def _im2col(x, k, p):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # n c h w k k
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)


def _conv_same(x, W, p, return_cols=False):
    n, _, h, w = x.shape
    f, k = W.shape[0], W.shape[2]
    cols = _im2col(x, k, p)
    out = (cols @ W.reshape(f, -1).T).reshape(n, h, w, f).transpose(0, 3, 1, 2)
    return (out, cols) if return_cols else out


class Conv2d(Layer):
    """Stride-1 convolution with 'same' zero padding (odd kernel sizes)."""

    kind = "conv"

    def __init__(self, in_ch, out_ch, kernel=3, rng=None, dtype=np.float64):
        super().__init__()
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_ch * kernel * kernel
        self.k = kernel
        self.pad = kernel // 2
        self.params["W"] = (rng.standard_normal((out_ch, in_ch, kernel, kernel))
                            * np.sqrt(2.0 / fan_in)).astype(dtype)
        self.params["b"] = np.zeros(out_ch, dtype=dtype)
        self.zero_grad()

    def forward(self, x, training=False):
        W, b = self.params["W"], self.params["b"]
        if x.shape[1] != W.shape[1]:
            raise ValueError(f"expected {W.shape[1]} input channels, got {x.shape[1]}")
        out, cols = _conv_same(x, W, self.pad, return_cols=True)
        if training:
            self._cache = (cols, x.shape)
        return out + b[None, :, None, None]

    def backward(self, dout):
        cols, (n, c, h, w) = self._require_cache()
        W = self.params["W"]
        f = W.shape[0]
        d2 = dout.transpose(0, 2, 3, 1).reshape(-1, f)
        self.grads["W"] += (d2.T @ cols).reshape(W.shape)
        self.grads["b"] += d2.sum(axis=0)
        # input gradient of a same-padded stride-1 conv is a same-padded conv
        # of dout with the spatially flipped, channel-transposed kernel
        Wt = W[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        return _conv_same(dout, Wt, self.pad)


class ConvTranspose2x2(Layer):
    """Transposed convolution, kernel 2 stride 2: (H, W) -> (2H, 2W)."""

    kind = "tconv"

    def __init__(self, in_ch, out_ch, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = (rng.standard_normal((in_ch, out_ch, 2, 2))
                            * np.sqrt(2.0 / in_ch)).astype(dtype)
        self.params["b"] = np.zeros(out_ch, dtype=dtype)
        self.zero_grad()

    def forward(self, x, training=False):
        n, c, h, w = x.shape
        W, b = self.params["W"], self.params["b"]
        f = W.shape[1]
        x2 = x.transpose(0, 2, 3, 1).reshape(-1, c)
        out = (x2 @ W.reshape(c, f * 4)).reshape(n, h, w, f, 2, 2)
        out = out.transpose(0, 3, 1, 4, 2, 5).reshape(n, f, 2 * h, 2 * w)
        out += b[None, :, None, None]
        if training:
            self._cache = (x2, x.shape)
        return out

    def backward(self, dout):
        x2, (n, c, h, w) = self._require_cache()
        W = self.params["W"]
        f = W.shape[1]
        d = dout.reshape(n, f, h, 2, w, 2).transpose(0, 2, 4, 1, 3, 5).reshape(-1, f * 4)
        self.grads["W"] += (x2.T @ d).reshape(W.shape)
        self.grads["b"] += dout.sum(axis=(0, 2, 3))
        dx = d @ W.reshape(c, f * 4).T
        return dx.reshape(n, h, w, c).transpose(0, 3, 1, 2)


class BatchNorm2d(Layer):
    kind = "batchnorm"

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float64):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.zero_grad()

    def forward(self, x, training=False):
        g = self.params["gamma"][None, :, None, None]
        bt = self.params["beta"][None, :, None, None]
        if training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * mean
            self.running_var = m * self.running_var + (1 - m) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        if training:
            self._cache = (xhat, inv)
        return g * xhat + bt

    def backward(self, dout):
        xhat, inv = self._require_cache()
        m = dout.shape[0] * dout.shape[2] * dout.shape[3]
        self.grads["gamma"] += (dout * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] += dout.sum(axis=(0, 2, 3))
        dxhat = dout * self.params["gamma"][None, :, None, None]
        s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
        return inv[None, :, None, None] / m * (m * dxhat - s1 - xhat * s2)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False):
        if training:
            self._cache = x > 0
        return np.maximum(x, 0)

    def backward(self, dout):
        return dout * self._require_cache()


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, training=False):
        # split by sign so neither branch overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        if training:
            self._cache = out
        return out

    def backward(self, dout):
        y = self._require_cache()
        return dout * y * (1.0 - y)


class Dropout(Layer):
    """Inverted dropout; identity at inference."""

    kind = "dropout"

    def __init__(self, rate, rng=None):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            if training:
                self._cache = None
                self._passthrough = True
            return x
        self._passthrough = False
        keep = (self.rng.random(x.shape) >= self.rate).astype(x.dtype) / (1.0 - self.rate)
        self._cache = keep
        return x * keep

    def backward(self, dout):
        if getattr(self, "_passthrough", False):
            return dout
        return dout * self._require_cache()


class MaxPool2x2(Layer):
    kind = "pool"

    def forward(self, x, training=False):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"max-pool needs even spatial dims, got {h}x{w}")
        win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        idx = win.argmax(axis=-1)
        if training:
            self._cache = (idx, x.shape)
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        idx, (n, c, h, w) = self._require_cache()
        dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
        np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
        return dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


class Concat(Layer):
    """Channel concatenation of the upsampled path and the skip tensor."""

    kind = "concat"

    def forward(self, x, skip, training=False):
        if x.shape[2:] != skip.shape[2:]:
            raise ValueError(f"skip spatial shape {skip.shape[2:]} != {x.shape[2:]}")
        if training:
            self._cache = x.shape[1]
        return np.concatenate([x, skip], axis=1)

    def backward(self, dout):
        c = self._require_cache()
        return dout[:, :c], dout[:, c:]


class Sequential(Layer):
    kind = "sequential"

    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout
