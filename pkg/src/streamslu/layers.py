"""Network primitives: valid convolution, pooling, batch norm, dense, softmax.

All batched ops take channels-last arrays, (batch, time, freq, channels) for
the convolutional stack and (batch, channels) for the dense head. Every
forward has a matching backward; time positions past a sample's valid length
carry no gradient because batch statistics and pooling are masked to the
valid region.
"""
from __future__ import annotations

import numpy as np

BN_EPS = 1e-5


def _as_tensor3(x) -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim != 3:
        raise ValueError(f"expected a (time, freq, channels) array, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# convolution (no padding, stride 1)

def conv_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    # x (B,T,F,Ci), kernel (kt,kf,Ci,Co) -> (B,T-kt+1,F-kf+1,Co)
    kt, kf, cin, cout = kernel.shape
    if x.shape[3] != cin:
        raise ValueError(f"input has {x.shape[3]} channels, kernel expects {cin}")
    if x.shape[1] < kt or x.shape[2] < kf:
        raise ValueError(
            f"kernel ({kt},{kf}) larger than input ({x.shape[1]},{x.shape[2]})")
    win = np.lib.stride_tricks.sliding_window_view(x, (kt, kf), axis=(1, 2))
    # win (B,T',F',Ci,kt,kf); contract Ci/kt/kf against the kernel
    y = np.tensordot(win, kernel, axes=([3, 4, 5], [2, 0, 1]))
    return y + bias


def conv_backward(d_out: np.ndarray, x: np.ndarray, kernel: np.ndarray,
                  need_dx: bool = True):
    """Gradients (d_x, d_kernel, d_bias) for conv_forward.

    need_dx=False skips the input gradient (None in its slot); the first
    layer of a network has no consumer for it, and for a wide-freq kernel
    the full-correlation workspace is large enough to matter.
    """
    kt, kf = kernel.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(x, (kt, kf), axis=(1, 2))
    d_kernel = np.tensordot(d_out, win, axes=([0, 1, 2], [0, 1, 2]))  # (Co,Ci,kt,kf)
    d_kernel = d_kernel.transpose(2, 3, 1, 0)
    d_bias = d_out.sum(axis=(0, 1, 2))
    if not need_dx:
        return None, d_kernel, d_bias
    # full correlation of d_out with the flipped kernel recovers d_x
    padded = np.pad(d_out, ((0, 0), (kt - 1, kt - 1), (kf - 1, kf - 1), (0, 0)))
    flipped = kernel[::-1, ::-1]
    win2 = np.lib.stride_tricks.sliding_window_view(padded, (kt, kf), axis=(1, 2))
    d_x = np.tensordot(win2, flipped, axes=([3, 4, 5], [3, 0, 1]))
    return d_x, d_kernel, d_bias


def conv2d_valid(x, kernel, bias) -> np.ndarray:
    """Single-sample valid convolution on a (time, freq, channels) array."""
    x = _as_tensor3(x)
    kernel = np.asarray(kernel)
    if kernel.ndim != 4:
        raise ValueError(f"kernel must be 4-D (kt, kf, cin, cout), got {kernel.shape}")
    return conv_forward(x[None], kernel, np.asarray(bias))[0]


# ---------------------------------------------------------------------------
# max pooling over time, kernel 2, stride 2, floor semantics

def maxpool_forward(x: np.ndarray):
    t_out = x.shape[1] // 2
    if t_out == 0:
        raise ValueError(f"cannot pool a time axis of length {x.shape[1]}")
    a = x[:, 0:2 * t_out:2]
    b = x[:, 1:2 * t_out:2]
    first = a >= b  # ties go to the earlier position
    return np.where(first, a, b), first


def maxpool_backward(d_out: np.ndarray, first: np.ndarray, in_shape) -> np.ndarray:
    d_x = np.zeros(in_shape, dtype=d_out.dtype)
    t_out = d_out.shape[1]
    d_x[:, 0:2 * t_out:2] = np.where(first, d_out, 0)
    d_x[:, 1:2 * t_out:2] = np.where(first, 0, d_out)
    return d_x


def maxpool_time(x) -> np.ndarray:
    """Single-sample 2x1 stride-2 time pooling; an odd trailing row is dropped."""
    return maxpool_forward(_as_tensor3(x)[None])[0][0]


# ---------------------------------------------------------------------------
# batch normalization (per channel, channels last)

def batchnorm_infer(x, gamma, beta, running_mean, running_var, eps: float = BN_EPS):
    """Normalize with frozen statistics; broadcasts over leading axes."""
    inv = 1.0 / np.sqrt(np.asarray(running_var) + eps)
    return (np.asarray(x) - running_mean) * inv * gamma + beta


def batchnorm_train_forward(x: np.ndarray, gamma, beta,
                            mask: np.ndarray | None = None, eps: float = BN_EPS):
    """Normalize with batch statistics over the valid region.

    mask is a (B, T) boolean of valid time positions for 4-D input; None
    means every position counts (always the case for 2-D dense input).
    Returns (y, (batch_mean, batch_var), cache).
    """
    if x.ndim == 2:
        n = x.shape[0]
        mean = x.mean(axis=0)
        centered = x - mean
        var = np.mean(centered * centered, axis=0)
    else:
        if mask is None:
            mask = np.ones(x.shape[:2], dtype=bool)
        w = mask[:, :, None, None]
        n = int(mask.sum()) * x.shape[2]
        if n == 0:
            raise ValueError("batch norm over an empty valid region")
        mean = np.sum(x * w, axis=(0, 1, 2)) / n
        centered = (x - mean) * w
        var = np.sum(centered * centered, axis=(0, 1, 2)) / n
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    y = x_hat * gamma + beta
    cache = (x_hat, inv_std, gamma, mask, n)
    return y, (mean, var), cache


def batchnorm_train_backward(d_out: np.ndarray, cache):
    """Gradients (d_x, d_gamma, d_beta) through the batch statistics."""
    x_hat, inv_std, gamma, mask, n = cache
    if d_out.ndim == 2:
        axes = (0,)
        w = None
    else:
        axes = (0, 1, 2)
        w = mask[:, :, None, None]
        d_out = d_out * w  # defensive: no gradient may enter via padding
    d_gamma = np.sum(d_out * x_hat, axis=axes)
    d_beta = np.sum(d_out, axis=axes)
    d_xhat = d_out * gamma
    mean_dxhat = np.sum(d_xhat, axis=axes) / n
    mean_dxhat_xhat = np.sum(d_xhat * x_hat, axis=axes) / n
    d_x = (d_xhat - mean_dxhat - x_hat * mean_dxhat_xhat) * inv_std
    if w is not None:
        d_x = d_x * w
    return d_x, d_gamma, d_beta


# ---------------------------------------------------------------------------
# global max pooling over all time/freq positions within the valid region

def global_maxpool_forward(x: np.ndarray, valid: np.ndarray):
    # x (B,T,F,C), valid (B,) counts of valid time positions
    b, t, f, c = x.shape
    mask = np.arange(t)[None, :] < np.asarray(valid)[:, None]
    shielded = np.where(mask[:, :, None, None], x, -np.inf)
    flat = shielded.reshape(b, t * f, c)
    arg = flat.argmax(axis=1)  # first occurrence wins ties
    pooled = np.take_along_axis(flat, arg[:, None, :], axis=1)[:, 0, :]
    return pooled, arg


def global_maxpool_backward(d_pooled: np.ndarray, arg: np.ndarray, in_shape) -> np.ndarray:
    b, t, f, c = in_shape
    d_flat = np.zeros((b, t * f, c), dtype=d_pooled.dtype)
    np.put_along_axis(d_flat, arg[:, None, :], d_pooled[:, None, :], axis=1)
    return d_flat.reshape(in_shape)


# ---------------------------------------------------------------------------
# dense, relu, softmax

def dense_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return x @ weight + bias


def dense_backward(d_out: np.ndarray, x: np.ndarray, weight: np.ndarray):
    return d_out @ weight.T, x.T @ d_out, d_out.sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(d_out: np.ndarray, pre_act: np.ndarray) -> np.ndarray:
    return d_out * (pre_act > 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its gradient w.r.t. logits."""
    b = logits.shape[0]
    log_p = log_softmax(logits)
    picked = log_p[np.arange(b), labels]
    bad = np.flatnonzero(~np.isfinite(picked))
    if bad.size:
        raise FloatingPointError(
            f"non-finite loss for sample index {int(bad[0])} in the batch")
    loss = -picked.mean()
    d_logits = np.exp(log_p)
    d_logits[np.arange(b), labels] -= 1.0
    d_logits /= b
    return loss, d_logits
