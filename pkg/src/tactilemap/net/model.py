"""Fully convolutional surface-normal estimator and its weight file format."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..core import NormalMap, TactileImage
from .layers import BatchNorm, Conv2D, ReLU

N_INPUT_CHANNELS = 8
NZ_FLOOR = 1e-6

_WEIGHT_MAGIC = b"TMNWEIGH"


@dataclass(frozen=True)
class NetConfig:
    blocks: int = 2
    channels_per_block: int = 64
    kernel: int = 3
    batch_norm: bool = True
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.kernel % 2 != 1 or self.kernel < 1:
            raise ValueError("kernel must be a positive odd integer")
        if self.blocks < 1:
            raise ValueError("need at least one block")
        if self.channels_per_block < 1:
            raise ValueError("channels_per_block must be >= 1")

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def build_input(image, untouched, dims=None):
    """Stack [R, G, B, R0, G0, B0, u, v] into a (rows, cols, 8) float32 field.

    ``u`` grows from 0 at the left column to 1 at the right, ``v`` from 0 at
    the top row to 1 at the bottom.
    """
    a = image.data if isinstance(image, TactileImage) else np.asarray(image)
    b = untouched.data if isinstance(untouched, TactileImage) else np.asarray(untouched)
    if a.shape != b.shape:
        raise ValueError(f"image {a.shape} and untouched {b.shape} differ in shape")
    if dims is not None and tuple(dims) != a.shape[:2]:
        raise ValueError("dims do not match the images")
    h, w = a.shape[:2]
    u = np.broadcast_to(np.linspace(0.0, 1.0, w, dtype=np.float32)[None, :], (h, w)) if w > 1 else np.zeros((h, w), np.float32)
    v = np.broadcast_to(np.linspace(0.0, 1.0, h, dtype=np.float32)[:, None], (h, w)) if h > 1 else np.zeros((h, w), np.float32)
    return np.concatenate(
        [a.astype(np.float32), b.astype(np.float32), u[..., None], v[..., None]], axis=-1
    )


class NormalNet:
    """conv -> batchnorm -> relu blocks followed by a 3-channel conv."""

    def __init__(self, cfg=NetConfig(), seed=0, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.layers = []
        c_in = N_INPUT_CHANNELS
        for _ in range(cfg.blocks):
            self.layers.append(Conv2D(c_in, cfg.channels_per_block, cfg.kernel, rng, dtype))
            if cfg.batch_norm:
                self.layers.append(BatchNorm(cfg.channels_per_block, cfg.bn_momentum, dtype=dtype))
            self.layers.append(ReLU())
            c_in = cfg.channels_per_block
        head = Conv2D(c_in, 3, cfg.kernel, rng, dtype)
        # start from a flat-surface guess so early gradients are informative
        head.params["bias"][2] = 1.0
        self.layers.append(head)

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name, val in layer.params.items():
                yield f"{i}.{type(layer).__name__}.{name}", layer, name, val

    def zero_grad(self):
        for layer in self.layers:
            for g in layer.grads.values():
                g[...] = 0

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, dout):
        for i in range(len(self.layers) - 1, -1, -1):
            dout = self.layers[i].backward(dout, need_input_grad=i > 0)

    def astype(self, dtype):
        for layer in self.layers:
            for name in list(layer.params):
                layer.params[name] = layer.params[name].astype(dtype)
                layer.grads[name] = layer.grads[name].astype(dtype)
            if isinstance(layer, BatchNorm):
                layer.running_mean = layer.running_mean.astype(dtype)
                layer.running_var = layer.running_var.astype(dtype)
        return self

    def state(self):
        """Ordered {name: array} of every trainable and running tensor."""
        out = {}
        for i, layer in enumerate(self.layers):
            kind = type(layer).__name__
            for name, val in layer.params.items():
                out[f"{i}.{kind}.{name}"] = val
            if isinstance(layer, BatchNorm):
                out[f"{i}.{kind}.running_mean"] = layer.running_mean
                out[f"{i}.{kind}.running_var"] = layer.running_var
        return out

    def load_state(self, state):
        mine = self.state()
        if set(mine) != set(state):
            raise ValueError("weight tensors do not match the network layout")
        for key, val in state.items():
            if mine[key].shape != np.shape(val):
                raise ValueError(f"shape mismatch for {key}: {np.shape(val)} vs {mine[key].shape}")
            i, _, name = key.split(".")
            layer = self.layers[int(i)]
            arr = np.array(val, dtype=mine[key].dtype)
            if name in layer.params:
                layer.params[name] = arr
            else:
                setattr(layer, name, arr)


@dataclass
class ModelWeights:
    cfg: NetConfig
    tensors: dict

    def to_net(self, dtype=np.float32):
        net = NormalNet(self.cfg, dtype=dtype)
        net.load_state(self.tensors)
        return net

    @classmethod
    def from_net(cls, net):
        return cls(net.cfg, {k: v.astype(np.float32).copy() for k, v in net.state().items()})

    def is_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())


def save_weights(path, weights):
    """Header (config hash + layer table as JSON) then little-endian f32 blobs."""
    table, offset, blobs = [], 0, []
    for name, arr in weights.tensors.items():
        b = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(b)})
        blobs.append(b)
        offset += len(b)
    header = json.dumps({
        "config": asdict(weights.cfg),
        "config_hash": weights.cfg.digest(),
        "layers": table,
    }).encode()
    with open(path, "wb") as fh:
        fh.write(_WEIGHT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_weights(path):
    buf = Path(path).read_bytes()
    if buf[:8] != _WEIGHT_MAGIC:
        raise ValueError("not a weight file")
    (hlen,) = struct.unpack_from("<I", buf, 8)
    header = json.loads(buf[12:12 + hlen])
    cfg = NetConfig(**header["config"])
    if cfg.digest() != header["config_hash"]:
        raise ValueError("config hash mismatch; weight file corrupt")
    base = 12 + hlen
    tensors = {}
    for entry in header["layers"]:
        start = base + entry["offset"]
        raw = buf[start:start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise ValueError(f"truncated tensor {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).astype(np.float32)
    return ModelWeights(cfg, tensors)


def forward(weights, field):
    """Raw 3-channel output of the network in inference mode."""
    net = weights if isinstance(weights, NormalNet) else weights.to_net()
    field = np.asarray(field)
    if field.ndim != 3 or field.shape[-1] != N_INPUT_CHANNELS:
        raise ValueError(f"expected (rows, cols, {N_INPUT_CHANNELS}) input, got {field.shape}")
    return net.forward(field.astype(np.float32), train=False)


def normalize_output(raw):
    """Per-pixel unit vectors with nz forced positive."""
    raw = np.asarray(raw, dtype=np.float64).copy()
    bad = raw[..., 2] <= 0
    raw[..., 2][bad] = NZ_FLOOR
    return raw / np.linalg.norm(raw, axis=-1, keepdims=True)


def infer_normals(weights, image, untouched):
    raw = forward(weights, build_input(image, untouched))
    return NormalMap.from_vectors(normalize_output(raw), image.mm_per_pixel)
