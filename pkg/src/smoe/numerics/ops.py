"""Differentiable operations over Tensors.

Every op computes its value with numpy, then registers a backward rule on
the active tape when any input requires grad. Broadcasting is restricted to
trailing-shape alignment (bias adds) and matched leading-batch matmul; the
narrow surface keeps every backward rule short enough to audit by hand.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, record_op


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: 2-D x 2-D, or 3-D x 3-D with equal leading batch.

    y = a @ b. Backward: da = g @ b^T, db = a^T @ g (batched over the
    leading axis in the 3-D case).
    """
    ad, bd = a.data, b.data
    if ad.ndim == bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul inner dims disagree: {ad.shape} x {bd.shape}")
    elif ad.ndim == bd.ndim == 3:
        if ad.shape[0] != bd.shape[0] or ad.shape[2] != bd.shape[1]:
            raise ShapeError(f"batched matmul dims disagree: {ad.shape} x {bd.shape}")
    else:
        raise ShapeError(f"matmul supports 2-D or matched 3-D, got {ad.shape} x {bd.shape}")
    out = Tensor(ad @ bd, requires_grad=_needs_grad(a, b))

    def grad_fn(g: np.ndarray):
        swap = (0, 2, 1) if ad.ndim == 3 else (1, 0)
        return [
            (a, g @ bd.transpose(swap)),
            (b, ad.transpose(swap) @ g),
        ]

    return record_op(out, grad_fn)


def _broadcast_ok(target: tuple[int, ...], small: tuple[int, ...]) -> bool:
    return len(small) <= len(target) and target[len(target) - len(small):] == small


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; b may broadcast over a's leading axes (bias add)."""
    if a.data.shape != b.data.shape and not _broadcast_ok(a.data.shape, b.data.shape):
        raise ShapeError(f"add shapes incompatible: {a.data.shape} + {b.data.shape}")
    out = Tensor(a.data + b.data, requires_grad=_needs_grad(a, b))
    lead = a.data.ndim - b.data.ndim

    def grad_fn(g: np.ndarray):
        gb = g.sum(axis=tuple(range(lead))) if lead else g
        return [(a, g), (b, gb)]

    return record_op(out, grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors (the GLU gate path)."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shapes differ: {a.data.shape} * {b.data.shape}")
    out = Tensor(a.data * b.data, requires_grad=_needs_grad(a, b))

    def grad_fn(g: np.ndarray):
        return [(a, g * b.data), (b, g * a.data)]

    return record_op(out, grad_fn)


def scale(a: Tensor, factor: float) -> Tensor:
    out = Tensor(a.data * factor, requires_grad=a.requires_grad)

    def grad_fn(g: np.ndarray):
        return [(a, g * factor)]

    return record_op(out, grad_fn)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), requires_grad=a.requires_grad)

    def grad_fn(g: np.ndarray):
        return [(a, np.broadcast_to(g, a.data.shape).copy())]

    return record_op(out, grad_fn)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape), requires_grad=a.requires_grad)
    orig = a.data.shape

    def grad_fn(g: np.ndarray):
        return [(a, g.reshape(orig))]

    return record_op(out, grad_fn)


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = Tensor(a.data.transpose(axes), requires_grad=a.requires_grad)
    inverse = tuple(np.argsort(axes))

    def grad_fn(g: np.ndarray):
        return [(a, g.transpose(inverse))]

    return record_op(out, grad_fn)


def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose2d needs a matrix, got {a.data.shape}")
    return permute(a, (1, 0))


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x); d/dx = s(x) * (1 + x * (1 - s(x)))."""
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(a.data * sig, requires_grad=a.requires_grad)

    def grad_fn(g: np.ndarray):
        return [(a, g * sig * (1.0 + a.data * (1.0 - sig)))]

    return record_op(out, grad_fn)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), requires_grad=a.requires_grad)

    def grad_fn(g: np.ndarray):
        return [(a, g * (a.data > 0.0))]

    return record_op(out, grad_fn)


def softmax_last(a: Tensor) -> Tensor:
    """Stable softmax over the last axis.

    Masked logits pushed to -1e30 underflow to exactly 0.0 after the shift,
    so masked attention weights are exact zeros, not tiny residues.
    """
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, requires_grad=a.requires_grad)

    def grad_fn(g: np.ndarray):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return [(a, y * (g - dot))]

    return record_op(out, grad_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, epsilon: float) -> Tensor:
    """Per-row normalization over the last axis, then affine gain/bias.

    y = gain * (x - mean) / sqrt(var + eps) + bias, with the biased variance.
    """
    if gain.data.shape != (x.data.shape[-1],) or bias.data.shape != gain.data.shape:
        raise ShapeError(
            f"layer_norm affine shapes {gain.data.shape}/{bias.data.shape} "
            f"do not match feature dim {x.data.shape[-1]}"
        )
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = centered * inv_std
    out = Tensor(xhat * gain.data + bias.data, requires_grad=_needs_grad(x, gain, bias))
    d = x.data.shape[-1]

    def grad_fn(g: np.ndarray):
        sum_axes = tuple(range(g.ndim - 1))
        g_hat = g * gain.data
        dx = inv_std * (
            g_hat
            - g_hat.mean(axis=-1, keepdims=True)
            - xhat * (g_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return [
            (x, dx),
            (gain, (g * xhat).sum(axis=sum_axes)),
            (bias, g.sum(axis=sum_axes)),
        ]

    return record_op(out, grad_fn)


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Row gather: out[i] = table[ids[i]]. Backward scatter-adds."""
    idx = np.asarray(list(ids), dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("embedding ids must be a flat id list")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexError(
            f"embedding id out of range [0, {table.data.shape[0]}): "
            f"min={idx.min()}, max={idx.max()}"
        )
    out = Tensor(table.data[idx], requires_grad=table.requires_grad)

    def grad_fn(g: np.ndarray):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return [(table, gt)]

    return record_op(out, grad_fn)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * keep, requires_grad=x.requires_grad)

    def grad_fn(g: np.ndarray):
        return [(x, g * keep)]

    return record_op(out, grad_fn)


def softmax_cross_entropy(logits: Tensor, targets: Sequence[int], ignore_id: int) -> Tensor:
    """Mean negative log-softmax over positions whose target != ignore_id.

    loss = (1/K) * sum_kept [ logsumexp(z_t) - z_t[target_t] ],
    dz_t = (softmax(z_t) - onehot_t) / K on kept rows, 0 elsewhere.
    Returns exact 0 when every position is ignored.
    """
    z = logits.data
    if z.ndim != 2:
        raise ShapeError(f"cross entropy expects [t x V] logits, got {z.shape}")
    tgt = np.asarray(list(targets), dtype=np.intp)
    if tgt.shape != (z.shape[0],):
        raise ShapeError(f"target length {tgt.shape} does not match {z.shape[0]} positions")
    kept = tgt != ignore_id
    if kept.any():
        bad = tgt[kept]
        if bad.min() < 0 or bad.max() >= z.shape[1]:
            raise IndexError(
                f"target id out of range [0, {z.shape[1]}): min={bad.min()}, max={bad.max()}"
            )
    n_kept = int(kept.sum())
    if n_kept == 0:
        out = Tensor(0.0, requires_grad=logits.requires_grad)

        def zero_fn(g: np.ndarray):
            return [(logits, np.zeros_like(z))]

        return record_op(out, zero_fn)

    shifted = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1)) + z.max(axis=-1)
    rows = np.arange(z.shape[0])
    nll = lse - z[rows, tgt.clip(0, z.shape[1] - 1)]
    loss_val = float(nll[kept].sum() / n_kept)
    out = Tensor(loss_val, requires_grad=logits.requires_grad)

    def grad_fn(g: np.ndarray):
        probs = np.exp(shifted)
        probs /= probs.sum(axis=-1, keepdims=True)
        gz = probs
        gz[rows[kept], tgt[kept]] -= 1.0
        gz[~kept] = 0.0
        return [(logits, gz * (float(g) / n_kept))]

    return record_op(out, grad_fn)
