"""Dense layer primitives with hand-written backward passes, SGD and a
finite-difference gradient checker.

Arrays are plain ``numpy.ndarray``.  Layer math runs in float32; anything
that accumulates over many terms (losses, metrics, the gradient checker)
runs in float64.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
consumes ``(dout, cache)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, DimensionError, NumericError

FLOAT = np.float32


def matmul_forward(a, b):
    """Matrix product ``a @ b`` for 2-D operands."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b, (a, b)


def matmul_backward(dout, cache):
    """Return ``(da, db)`` for ``out = a @ b``."""
    a, b = cache
    return dout @ b.T, a.T @ dout


def matmul(a, b):
    return matmul_forward(a, b)[0]


def _as_batch(x):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"conv2d: expected C×H×W or N×C×H×W input, got {x.shape}")


def conv2d_forward(x, kernels, bias=None, stride=1, padding=0):
    """Cross-correlation (no kernel flip) with zero padding.

    ``x`` is ``(C, H, W)`` or ``(N, C, H, W)``; ``kernels`` is
    ``(F, C, kh, kw)``.  Output spatial size is
    ``(H + 2*padding - kh) // stride + 1`` (same for width).
    """
    x = np.asarray(x)
    kernels = np.asarray(kernels)
    xb, squeezed = _as_batch(x)
    n, c, h, w = xb.shape
    if kernels.ndim != 4 or kernels.shape[1] != c:
        raise DimensionError(
            f"conv2d: kernels {kernels.shape} incompatible with input {x.shape}")
    f, _, kh, kw = kernels.shape
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"conv2d: bad stride={stride} / padding={padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(
            f"conv2d: kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * padding}x{w + 2 * padding}")
    xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # (N, C, H', W', kh, kw)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = cols @ kernels.reshape(f, -1).T
    if bias is not None:
        out = out + bias
    out = out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    cache = (xb.shape, cols, kernels, stride, padding, squeezed, bias is not None)
    return (out[0] if squeezed else out), cache


def conv2d_backward(dout, cache):
    """Return ``(dx, dkernels, dbias)``; ``dbias`` is None if no bias was used."""
    xshape, cols, kernels, stride, padding, squeezed, has_bias = cache
    n, c, h, w = xshape
    f, _, kh, kw = kernels.shape
    dout = dout[None] if squeezed else dout
    ho, wo = dout.shape[2], dout.shape[3]
    dflat = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dkernels = (dflat.T @ cols).reshape(kernels.shape)
    dbias = dflat.sum(axis=0) if has_bias else None

    dcols = (dflat @ kernels.reshape(f, -1)).reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, padding:padding + h, padding:padding + w]
    if squeezed:
        dx = dx[0]
    return dx, dkernels, dbias


def conv2d(x, kernels, stride=1, padding=0):
    return conv2d_forward(x, kernels, None, stride, padding)[0]


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, cache):
    # gradient at exactly 0 is 0
    return dout * (cache > 0)


def relu(x):
    return relu_forward(np.asarray(x))[0]


def avg_pool2_forward(x):
    """2×2 average pooling with stride 2 over the last two axes."""
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise DimensionError(f"avg_pool2: spatial size {h}x{w} is not even")
    out = x.reshape(*x.shape[:-2], h // 2, 2, w // 2, 2).mean(axis=(-3, -1))
    return out, x.shape


def avg_pool2_backward(dout, cache):
    g = np.repeat(np.repeat(dout, 2, axis=-2), 2, axis=-1) * 0.25
    return g.reshape(cache)


@dataclass
class OptimizerState:
    """SGD hyperparameters plus one velocity buffer per parameter."""

    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}")
        if not self.weight_decay >= 0:
            raise ConfigurationError(f"weight_decay must be >= 0, got {self.weight_decay}")


def sgd_step(params, grad, state, key="param"):
    """One SGD-with-momentum update (coupled weight decay), in place.

    ``v <- momentum * v + (grad + weight_decay * params)``
    ``params <- params - learning_rate * v``

    The velocity buffer is kept in ``state.velocity[key]``.  Returns ``params``.
    """
    if params.shape != grad.shape:
        raise DimensionError(f"sgd_step: params {params.shape} vs grad {grad.shape}")
    v = state.velocity.get(key)
    if v is None:
        v = np.zeros_like(params)
    elif v.shape != params.shape:
        raise DimensionError(f"sgd_step: velocity {v.shape} vs params {params.shape}")
    v = state.momentum * v + (grad + state.weight_decay * params)
    state.velocity[key] = v.astype(params.dtype, copy=False)
    params -= (state.learning_rate * v).astype(params.dtype, copy=False)
    return params


def finite_diff_check(f, x, analytic_grad, eps=1e-4):
    """Max relative error between ``analytic_grad`` and central differences.

    ``f`` maps an array shaped like ``x`` to a scalar.  ``x`` is evaluated in
    float64 (a copy; the caller's array is untouched).  The per-coordinate
    error is ``|fd - an| / max(1, |fd|, |an|)``.
    """
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    analytic_grad = np.asarray(analytic_grad, dtype=np.float64)
    if analytic_grad.shape != x.shape:
        raise DimensionError(f"gradient shape {analytic_grad.shape} != x shape {x.shape}")
    flat = x.reshape(-1)
    fd = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"finite_diff_check: non-finite f at coordinate {i}")
        fd[i] = (fp - fm) / (2 * eps)
    an = analytic_grad.reshape(-1)
    denom = np.maximum(1.0, np.maximum(np.abs(fd), np.abs(an)))
    return float(np.max(np.abs(fd - an) / denom)) if flat.size else 0.0
