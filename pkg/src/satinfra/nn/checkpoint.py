"""Binary checkpoints.

Layout (little-endian)::

    b"SUNET1"
    u32 length, then that many bytes of UTF-8 JSON (config + metadata)
    u32 tensor count
    per tensor: u32 ndim, ndim x u32 extents, float32 data

Tensors are the parameters in declaration order followed by the
batch-norm running mean/variance pairs, also in declaration order.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .unet import SatUnet, UnetConfig

MAGIC = b"SUNET1"


def _tensors(net: SatUnet):
    out = [p for _, p in net.parameters()]
    for bn in net.batchnorms():
        out += [bn.running_mean, bn.running_var]
    return out


def save_checkpoint(net: SatUnet, path, meta=None):
    header = json.dumps({"config": net.config.to_dict(), "meta": meta or {}},
                        sort_keys=True).encode()
    tensors = _tensors(net)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(tensors)))
        for t in tensors:
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (network, meta)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:6] != MAGIC:
        raise ValueError(f"{path}: not a SUNET1 checkpoint")
    pos = 6
    (hlen,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    header = json.loads(buf[pos:pos + hlen].decode())
    pos += hlen
    net = SatUnet(UnetConfig(**header["config"]))
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    arrays = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays.append(np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(shape))
        pos += 4 * size
    if pos != len(buf):
        raise ValueError(f"{path}: trailing bytes in checkpoint")

    params = net.parameters()
    bns = net.batchnorms()
    if count != len(params) + 2 * len(bns):
        raise ValueError(f"{path}: expected {len(params) + 2 * len(bns)} tensors, found {count}")
    dt = np.dtype(net.config.dtype)
    for (name, p), a in zip(params, arrays):
        if p.shape != a.shape:
            raise ValueError(f"{path}: shape mismatch for {name}: {a.shape} vs {p.shape}")
        p[...] = a
    rest = arrays[len(params):]
    for bn, (mean, var) in zip(bns, zip(rest[::2], rest[1::2])):
        bn.running_mean = mean.astype(dt)
        bn.running_var = var.astype(dt)
    return net, header["meta"]
