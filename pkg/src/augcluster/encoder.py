"""Small convolutional encoder with explicit forward/backward passes.

Architecture: ``[conv3x3 -> relu -> avgpool2] * len(filters) -> flatten -> fc``,
followed by L2 normalisation of the output (switchable for raw inner
products).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .errors import ConfigurationError, DimensionError, StateError

NORM_EPS = 1e-12


@dataclass(frozen=True)
class ArchConfig:
    input_size: tuple = (32, 32)
    in_channels: int = 3
    filters: tuple = (8, 16)
    kernel_size: int = 3
    embedding_dim: int = 64
    normalize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        object.__setattr__(self, "filters", tuple(int(v) for v in self.filters))
        h, w = self.input_size
        if h <= 0 or w <= 0 or self.in_channels <= 0 or self.embedding_dim <= 0:
            raise ConfigurationError(f"non-positive dimension in {self}")
        if not self.filters or min(self.filters) <= 0:
            raise ConfigurationError(f"filters must be positive, got {self.filters}")
        if self.kernel_size % 2 != 1:
            raise ConfigurationError("kernel_size must be odd (same padding)")
        for _ in self.filters:
            if h % 2 or w % 2:
                raise ConfigurationError(
                    f"input {self.input_size} cannot be pooled {len(self.filters)} times")
            h, w = h // 2, w // 2

    @property
    def flat_features(self):
        h, w = self.input_size
        scale = 2 ** len(self.filters)
        return self.filters[-1] * (h // scale) * (w // scale)


@dataclass
class EncoderParams:
    arch: ArchConfig
    conv_blocks: list          # [(kernels F×C×k×k, bias F), ...]
    fc: tuple                  # (weight d×flat, bias d)
    version: int = field(default=0, compare=False)

    def tensors(self):
        """Named parameter arrays, in a fixed order."""
        out = {}
        for i, (k, b) in enumerate(self.conv_blocks):
            out[f"conv{i}.kernels"] = k
            out[f"conv{i}.bias"] = b
        out["fc.weight"], out["fc.bias"] = self.fc
        return out

    @property
    def dtype(self):
        return self.fc[0].dtype

    def astype(self, dtype):
        """Copy with every tensor cast (float64 copies are used for gradient checks)."""
        return EncoderParams(
            self.arch,
            [(k.astype(dtype), b.astype(dtype)) for k, b in self.conv_blocks],
            (self.fc[0].astype(dtype), self.fc[1].astype(dtype)),
        )

    def copy(self):
        return self.astype(self.dtype)

    def to_dict(self):
        return {
            "arch": asdict(self.arch),
            "tensors": {name: {"shape": list(t.shape), "data": t.ravel().tolist()}
                        for name, t in self.tensors().items()},
        }

    @classmethod
    def from_dict(cls, d):
        arch = ArchConfig(**d["arch"])
        t = {name: np.asarray(v["data"], dtype=nx.FLOAT).reshape(v["shape"])
             for name, v in d["tensors"].items()}
        blocks = [(t[f"conv{i}.kernels"], t[f"conv{i}.bias"]) for i in range(len(arch.filters))]
        params = cls(arch, blocks, (t["fc.weight"], t["fc.bias"]))
        check_params(params)
        return params


def check_params(params):
    arch = params.arch
    c = arch.in_channels
    k = arch.kernel_size
    for (kern, bias), f in zip(params.conv_blocks, arch.filters):
        if kern.shape != (f, c, k, k) or bias.shape != (f,):
            raise ConfigurationError(f"conv block shapes {kern.shape}/{bias.shape} "
                                     f"do not chain (expected {(f, c, k, k)})")
        c = f
    w, b = params.fc
    if w.shape != (arch.embedding_dim, arch.flat_features) or b.shape != (arch.embedding_dim,):
        raise ConfigurationError(f"fc shapes {w.shape}/{b.shape} do not match architecture")


def encoder_init(arch=None, seed=0):
    """He-initialised weights (std ``sqrt(2 / fan_in)``), zero biases."""
    arch = arch or ArchConfig()
    rng = np.random.default_rng(seed)
    blocks = []
    c = arch.in_channels
    k = arch.kernel_size
    for f in arch.filters:
        std = np.sqrt(2.0 / (c * k * k))
        blocks.append((rng.normal(0.0, std, (f, c, k, k)).astype(nx.FLOAT),
                       np.zeros(f, nx.FLOAT)))
        c = f
    flat = arch.flat_features
    w = rng.normal(0.0, np.sqrt(2.0 / flat), (arch.embedding_dim, flat)).astype(nx.FLOAT)
    return EncoderParams(arch, blocks, (w, np.zeros(arch.embedding_dim, nx.FLOAT)))


def l2_normalize_forward(z):
    """Row-wise unit normalisation; rows with norm < 1e-12 map to e_0."""
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    degenerate = norms[:, 0] < NORM_EPS
    out = z / np.where(norms < NORM_EPS, 1.0, norms)
    if degenerate.any():
        out[degenerate] = 0.0
        out[degenerate, 0] = 1.0
    return out.astype(z.dtype, copy=False), (out, norms, degenerate)


def l2_normalize_backward(dout, cache):
    """Apply ``(I - u u^T) / ||z||`` per row; degenerate rows get zero gradient."""
    u, norms, degenerate = cache
    proj = dout - u * np.sum(dout * u, axis=1, keepdims=True)
    dz = proj / np.where(norms < NORM_EPS, 1.0, norms)
    dz[degenerate] = 0.0
    return dz


def encode(params, images):
    """Forward pass.

    ``images`` is ``(3, H, W)`` or ``(N, 3, H, W)`` in [0, 1].  Returns
    ``(embeddings, cache)`` where embeddings are ``(d,)`` or ``(N, d)``.
    """
    arch = params.arch
    x = np.asarray(images, dtype=params.dtype)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != (arch.in_channels, *arch.input_size):
        raise DimensionError(
            f"encode: image shape {np.shape(images)} does not match "
            f"({arch.in_channels}, {arch.input_size[0]}, {arch.input_size[1]})")
    pad = arch.kernel_size // 2
    caches = []
    h = x
    for kern, bias in params.conv_blocks:
        h, c_conv = nx.conv2d_forward(h, kern, bias, stride=1, padding=pad)
        h, c_relu = nx.relu_forward(h)
        h, c_pool = nx.avg_pool2_forward(h)
        caches.append((c_conv, c_relu, c_pool))
    flat_shape = h.shape
    flat = h.reshape(h.shape[0], -1)
    w, b = params.fc
    z = flat @ w.T + b
    norm_cache = None
    if arch.normalize:
        z, norm_cache = l2_normalize_forward(z)
    cache = {"version": params.version, "owner": id(params), "blocks": caches,
             "flat": flat, "flat_shape": flat_shape, "norm": norm_cache, "single": single}
    return (z[0] if single else z), cache


def encode_backward(params, cache, upstream):
    """Gradients of every parameter given ``dLoss/dEmbedding``.

    Returns a dict keyed like :meth:`EncoderParams.tensors`.
    """
    if cache is None or cache.get("owner") != id(params) or cache.get("version") != params.version:
        raise StateError("encode_backward: cache is missing or stale for these params")
    g = np.asarray(upstream, dtype=params.dtype)
    if cache["single"]:
        g = g[None]
    if g.shape != (cache["flat"].shape[0], params.arch.embedding_dim):
        raise DimensionError(f"encode_backward: upstream gradient has shape {np.shape(upstream)}")
    if cache["norm"] is not None:
        g = l2_normalize_backward(g, cache["norm"])
    w, _ = params.fc
    grads = {"fc.weight": g.T @ cache["flat"], "fc.bias": g.sum(axis=0)}
    dh = (g @ w).reshape(cache["flat_shape"])
    for i in reversed(range(len(params.conv_blocks))):
        c_conv, c_relu, c_pool = cache["blocks"][i]
        dh = nx.avg_pool2_backward(dh, c_pool)
        dh = nx.relu_backward(dh, c_relu)
        dh, dk, db = nx.conv2d_backward(dh, c_conv)
        grads[f"conv{i}.kernels"] = dk
        grads[f"conv{i}.bias"] = db
    return grads


def embed(params, images, batch_size=256):
    """Embeddings for a stack of images without keeping caches."""
    images = np.asarray(images, dtype=params.dtype)
    out = [encode(params, images[i:i + batch_size])[0]
           for i in range(0, len(images), batch_size)]
    return np.concatenate(out, axis=0) if out else np.zeros((0, params.arch.embedding_dim), nx.FLOAT)


def save_checkpoint(path, params, train_config=None, aspect_tag=None, prototypes=None):
    payload = {"format": "augcluster-encoder/1", "aspect_tag": aspect_tag,
               "train_config": train_config, **params.to_dict()}
    if prototypes is not None:
        payload["prototypes"] = {"shape": list(prototypes.shape),
                                 "data": prototypes.ravel().tolist()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    """Return ``(params, metadata)``; metadata holds aspect tag and train config."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    params = EncoderParams.from_dict(payload)
    meta = {"aspect_tag": payload.get("aspect_tag"), "train_config": payload.get("train_config")}
    if payload.get("prototypes"):
        p = payload["prototypes"]
        meta["prototypes"] = np.asarray(p["data"], dtype=nx.FLOAT).reshape(p["shape"])
    return params, meta
