"""Forward and backward passes for the layers used by the phishing CNNs.

Sequences are laid out as ``[..., L, C]``: position-major, channel-minor,
with any number of leading batch axes. All functions are pure; state such
as batch-norm running statistics is returned, not mutated.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.99
BCE_CLIP = 1e-7


class ShapeError(ValueError):
    """Raised when tensor shapes do not agree with a layer's contract."""


def _check_finite_shape(name: str, arr: np.ndarray, ndim_min: int) -> None:
    if arr.ndim < ndim_min:
        raise ShapeError(f"{name} must have at least {ndim_min} dimensions, got shape {arr.shape}")


# --- convolution ----------------------------------------------------------

def conv1d_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid 1D convolution (cross-correlation), stride 1, no activation.

    ``x`` is ``[..., L, C_in]``, ``kernels`` is ``[k, C_in, F]`` and ``bias``
    is ``[F]``. Returns ``[..., L - k + 1, F]``.
    """
    _check_finite_shape("input", x, 2)
    if kernels.ndim != 3:
        raise ShapeError(f"kernels must be [k, C_in, F], got shape {kernels.shape}")
    k, c_in, f = kernels.shape
    length = x.shape[-2]
    if x.shape[-1] != c_in:
        raise ShapeError(f"input channel dimension C_in={x.shape[-1]} does not match kernel C_in={c_in}")
    if bias.shape != (f,):
        raise ShapeError(f"bias must have shape ({f},) to match filter count F, got {bias.shape}")
    if k < 1:
        raise ShapeError("kernel length k must be >= 1")
    if length < k:
        raise ShapeError(f"input shorter than kernel: L={length} < k={k}")
    # windows: [..., T, C_in, k]
    windows = sliding_window_view(x, k, axis=-2)
    t = length - k + 1
    lead = x.shape[:-2]
    cols = windows.reshape(-1, c_in * k)
    w = kernels.transpose(1, 0, 2).reshape(c_in * k, f)
    out = cols @ w + bias
    return out.reshape(*lead, t, f)


def conv1d_backward(x: np.ndarray, kernels: np.ndarray, grad_out: np.ndarray):
    """Gradients of a scalar loss through :func:`conv1d_forward`.

    Returns ``(input_grad, kernel_grad, bias_grad)``.
    """
    k, c_in, f = kernels.shape
    length = x.shape[-2]
    t = length - k + 1
    expected = x.shape[:-2] + (t, f)
    if grad_out.shape != expected:
        raise ShapeError(f"upstream gradient shape {grad_out.shape} does not match conv output shape {expected}")
    g2 = grad_out.reshape(-1, f)
    cols = sliding_window_view(x, k, axis=-2).reshape(-1, c_in * k)
    kernel_grad = (cols.T @ g2).reshape(c_in, k, f).transpose(1, 0, 2)
    bias_grad = g2.sum(axis=0)
    input_grad = np.zeros_like(x, dtype=np.result_type(x, kernels, grad_out))
    for i in range(k):
        # output position t reads input position t + i through kernel tap i
        input_grad[..., i:i + t, :] += grad_out @ kernels[i].T
    return input_grad, kernel_grad, bias_grad


# --- pooling --------------------------------------------------------------

def maxpool1d_forward(x: np.ndarray, size: int = 2, stride: int = 2):
    """Non-overlapping max pooling along the sequence axis.

    A trailing partial window is dropped. Returns ``(output, argmax)`` where
    ``argmax`` holds, for each output cell, the input position that won;
    ties go to the earlier position.
    """
    if size != stride:
        raise ValueError("only non-overlapping pooling (size == stride) is supported")
    _check_finite_shape("input", x, 2)
    length = x.shape[-2]
    if length < size:
        raise ShapeError(f"pooling input length L={length} is shorter than pool size {size}")
    n_out = length // size
    trimmed = x[..., : n_out * size, :]
    windows = trimmed.reshape(*x.shape[:-2], n_out, size, x.shape[-1])
    offset = windows.argmax(axis=-2)
    out = np.take_along_axis(windows, offset[..., None, :], axis=-2)[..., 0, :]
    argmax = offset + np.arange(n_out)[:, None] * size
    return out, argmax


def maxpool1d_backward(grad_out: np.ndarray, argmax: np.ndarray, input_length: int) -> np.ndarray:
    """Route each upstream gradient to the input position that won the max."""
    if grad_out.shape != argmax.shape:
        raise ShapeError(f"upstream gradient shape {grad_out.shape} does not match pooled shape {argmax.shape}")
    shape = grad_out.shape[:-2] + (input_length, grad_out.shape[-1])
    dx = np.zeros(shape, dtype=grad_out.dtype)
    np.put_along_axis(dx, argmax, grad_out, axis=-2)
    return dx


# --- dense ----------------------------------------------------------------

def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if weights.ndim != 2:
        raise ShapeError(f"weights must be [D, U], got shape {weights.shape}")
    d, u = weights.shape
    if x.shape[-1] != d:
        raise ShapeError(f"input dimension D={x.shape[-1]} does not match weights D={d}")
    if bias.shape != (u,):
        raise ShapeError(f"bias must have shape ({u},) to match units U, got {bias.shape}")
    return x @ weights + bias


def dense_backward(x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray):
    expected = x.shape[:-1] + (weights.shape[1],)
    if grad_out.shape != expected:
        raise ShapeError(f"upstream gradient shape {grad_out.shape} does not match dense output shape {expected}")
    x2 = x.reshape(-1, x.shape[-1])
    g2 = grad_out.reshape(-1, weights.shape[1])
    return grad_out @ weights.T, x2.T @ g2, g2.sum(axis=0)


# --- activations ----------------------------------------------------------

def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # gradient at exactly 0 is 0
    return np.where(x > 0, grad_out, 0)


def sigmoid(x):
    """Logistic function, overflow-free for any finite input.

    Results are kept strictly inside (0, 1): saturated values are pinned to
    the nearest representable numbers next to 0 and 1.
    """
    x = np.asarray(x)
    dtype = np.result_type(x, np.float32)
    out = np.empty_like(x, dtype=dtype)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    info = np.finfo(dtype)
    np.clip(out, info.smallest_subnormal, np.nextafter(dtype.type(1), dtype.type(0)), out=out)
    return out if out.ndim else out[()]


def sigmoid_backward(s: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * s * (1 - s)


# --- batch normalization --------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, training: bool,
                      momentum: float = BN_MOMENTUM, eps: float = BN_EPSILON):
    """Per-channel batch normalization over every axis except the last.

    Returns ``(out, cache, new_running_mean, new_running_var)``. In inference
    mode the running statistics are used and returned unchanged.
    """
    c = x.shape[-1]
    for name, arr in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)):
        if arr.shape != (c,):
            raise ShapeError(f"{name} must have shape ({c},) to match channel count C, got {arr.shape}")
    axes = tuple(range(x.ndim - 1))
    if training:
        n = int(np.prod(x.shape[:-1]))
        if x.shape[0] < 2 or n < 2:
            raise ShapeError(f"batch normalization in train mode needs batch size B >= 2, got {x.shape[0]}")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        new_mean = momentum * running_mean + (1 - momentum) * mean
        new_var = momentum * running_var + (1 - momentum) * var
    else:
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    out = gamma * x_hat + beta
    cache = (x_hat, inv_std, gamma, training)
    return out, cache, new_mean, new_var


def batchnorm_backward(grad_out, cache):
    """Returns ``(input_grad, gamma_grad, beta_grad)``."""
    x_hat, inv_std, gamma, training = cache
    axes = tuple(range(grad_out.ndim - 1))
    gamma_grad = (grad_out * x_hat).sum(axis=axes)
    beta_grad = grad_out.sum(axis=axes)
    g_hat = grad_out * gamma
    if not training:
        return g_hat * inv_std, gamma_grad, beta_grad
    n = int(np.prod(grad_out.shape[:-1]))
    dx = inv_std / n * (n * g_hat - g_hat.sum(axis=axes) - x_hat * (g_hat * x_hat).sum(axis=axes))
    return dx, gamma_grad, beta_grad


# --- dropout --------------------------------------------------------------

def dropout_forward(x, rate: float, rng, training: bool):
    """Inverted dropout. Returns ``(out, mask)``; ``mask`` is None when inactive."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0:
        return x, None
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / (1 - rate)
    return x * mask, mask


def dropout_backward(grad_out, mask):
    return grad_out if mask is None else grad_out * mask


# --- loss -----------------------------------------------------------------

def bce_loss(p, y):
    """Binary cross-entropy averaged over the batch.

    ``p`` is clipped to ``[1e-7, 1 - 1e-7]``. Returns ``(loss, dloss_dp)``
    where the gradient is taken with respect to the (clipped) probabilities
    and already includes the 1/n averaging factor.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"probabilities shape {p.shape} does not match labels shape {y.shape}")
    pc = np.clip(p, BCE_CLIP, 1 - BCE_CLIP)
    n = pc.size
    losses = -(y * np.log(pc) + (1 - y) * np.log1p(-pc))
    grad = (-(y / pc) + (1 - y) / (1 - pc)) / n
    return float(losses.mean()), grad
