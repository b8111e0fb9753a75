"""Composite and fused differentiable operations used by the model."""

from __future__ import annotations

import numpy as np

from .tensor import (
    NumericError,
    ShapeError,
    Tensor,
    _node,
    clamp_min,
    ensure_tensor,
    getitem,
    sqrt,
    tsum,
)

COSINE_EPS = 1e-8
_GELU_C = np.sqrt(2.0 / np.pi)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis``, computed with max subtraction."""
    if np.isnan(x.data).any():
        raise NumericError("softmax received NaN input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), vjp)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if np.isnan(x.data).any():
        raise NumericError("log_softmax received NaN input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (x,), vjp)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    if eps <= 0:
        raise ValueError("layernorm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data
    lead = tuple(range(x.ndim - 1))

    def vjp(g):
        dxhat = g * gain.data
        dx = inv_std * (
            dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _node(out, (x, gain, bias), vjp)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def vjp(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)

    return _node(out, (x,), vjp)


def l2_norm(x: Tensor, axis: int = -1, keepdims: bool = True) -> Tensor:
    """Euclidean norm along ``axis``, floored at ``COSINE_EPS``."""
    return clamp_min(sqrt(tsum(x * x, axis=axis, keepdims=keepdims)), COSINE_EPS)


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    return x / l2_norm(x, axis)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """aᵀb / (‖a‖‖b‖) along the last axis.

    Norms are floored at 1e-8, so a zero vector yields similarity 0 rather
    than NaN.
    """
    a, b = ensure_tensor(a), ensure_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"cosine_similarity shape mismatch: {a.shape} vs {b.shape}")
    num = tsum(a * b, axis=-1)
    return num / (l2_norm(a, keepdims=False) * l2_norm(b, keepdims=False))


def mean_pool(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Average x[B, N, D] over N; with ``mask`` [B, N], only where mask is 1.

    Rows whose mask is all zero pool to the zero vector.
    """
    if mask is None:
        return x.mean(axis=1)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != x.shape[:2]:
        raise ShapeError(f"mean_pool mask {mask.shape} does not match tokens {x.shape}")
    counts = np.maximum(mask.sum(axis=1, keepdims=True), 1.0)
    weights = (mask / counts)[:, :, None]
    return tsum(x * weights, axis=1)


def cross_entropy_rows(logits: Tensor, targets) -> Tensor:
    """Mean over rows of -log softmax(logits)[i, targets[i]]."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy_rows expects logits[B,C] and targets[B], got {logits.shape}, {targets.shape}")
    picked = getitem(log_softmax(logits, axis=-1), (np.arange(logits.shape[0]), targets))
    return -picked.mean()


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, padding: int = 0) -> Tensor:
    """2-D cross-correlation, stride 1.

    Args:
        x: Input [B, C, H, W].
        weight: Kernel [O, C, kh, kw].
        bias: Per-output-channel bias [O].
        padding: Zero padding applied to both spatial axes.
    """
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d shape mismatch: input {x.shape}, kernel {weight.shape}")
    _, _, kh, kw = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    H = xp.shape[2] - kh + 1
    W = xp.shape[3] - kw + 1
    out = np.zeros((x.shape[0], weight.shape[0], H, W))
    for i in range(kh):
        for j in range(kw):
            out += np.einsum("bchw,oc->bohw", xp[:, :, i : i + H, j : j + W], weight.data[:, :, i, j])
    out += bias.data[None, :, None, None]

    def vjp(g):
        gx = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i : i + H, j : j + W] += np.einsum("bohw,oc->bchw", g, weight.data[:, :, i, j])
                gw[:, :, i, j] = np.einsum("bohw,bchw->oc", g, xp[:, :, i : i + H, j : j + W])
        if padding:
            gx = gx[:, :, padding:-padding, padding:-padding]
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _node(out, (x, weight, bias), vjp)
