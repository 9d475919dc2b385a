"""Differentiable 1-D layer primitives with explicit forward caches.

Every forward returns ``(output, ctx)``. The ctx object carries exactly the
intermediates its matching backward needs; passing ``training=False`` returns
``ctx=None`` and retains nothing. There is no global tape: callers own the
contexts, which keeps the backward pass auditable and the ops safe to run
concurrently on different batches.

Arrays are plain numpy ndarrays, row-major, shaped (N, C, T) for signals.
Ops preserve the input dtype, so the same code runs in float32 for training
and float64 for gradient checking.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, LayerUsageError

# Probability floor inside cross entropy; prevents -inf on saturated softmax.
LOG_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

@dataclass
class ConvCtx:
    x_padded: np.ndarray
    pad_left: int
    input_length: int
    stride: int
    weight: np.ndarray


def _same_padding(length: int, kernel: int, stride: int) -> tuple[int, int, int]:
    out_length = -(-length // stride)  # ceil
    total = max((out_length - 1) * stride + kernel - length, 0)
    left = total // 2
    return out_length, left, total - left


def conv1d_forward(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    padding: str = "same",
    training: bool = False,
) -> tuple[np.ndarray, ConvCtx | None]:
    """Cross-correlate (N, Cin, T) with (Cout, Cin, K) kernels plus bias.

    "same" zero-pads so the output length is ceil(T / stride); "valid" uses
    no padding. Implemented as window extraction plus one BLAS matmul.
    """
    if x.ndim != 3 or weight.ndim != 3:
        raise DimensionError(
            f"conv1d expects input (N,Cin,T) and weight (Cout,Cin,K), "
            f"got {x.shape} and {weight.shape}"
        )
    n, cin, t = x.shape
    cout, w_cin, k = weight.shape
    if w_cin != cin:
        raise DimensionError(
            f"weight expects {w_cin} input channels, input has {cin}"
        )
    if bias.shape != (cout,):
        raise DimensionError(f"bias shape {bias.shape} != ({cout},)")
    if k < 1 or stride < 1:
        raise DimensionError(f"kernel {k} and stride {stride} must be >= 1")

    if padding == "same":
        t_out, pad_left, pad_right = _same_padding(t, k, stride)
    elif padding == "valid":
        if t < k:
            raise DimensionError(f"input length {t} shorter than kernel {k}")
        t_out, pad_left, pad_right = (t - k) // stride + 1, 0, 0
    else:
        raise DimensionError(f"unknown padding mode {padding!r}")

    if pad_left or pad_right:
        xp = np.zeros((n, cin, t + pad_left + pad_right), dtype=x.dtype)
        xp[:, :, pad_left : pad_left + t] = x
    else:
        xp = x

    # (N, Cin, T_out, K) view, then one (N*T_out, Cin*K) @ (Cin*K, Cout)
    windows = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    cols = windows.transpose(0, 2, 1, 3).reshape(n * t_out, cin * k)
    out = cols @ weight.reshape(cout, cin * k).T
    out += bias
    y = out.reshape(n, t_out, cout).transpose(0, 2, 1)

    ctx = ConvCtx(xp, pad_left, t, stride, weight) if training else None
    return np.ascontiguousarray(y), ctx


def conv1d_backward(
    grad_out: np.ndarray, ctx: ConvCtx | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients of conv1d_forward w.r.t. input, weight, and bias."""
    if ctx is None:
        raise LayerUsageError("conv1d_backward called without a forward context")
    xp, pad_left, t, stride = ctx.x_padded, ctx.pad_left, ctx.input_length, ctx.stride
    weight = ctx.weight
    cout, cin, k = weight.shape
    n, _, t_out = grad_out.shape

    windows = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    cols = windows.transpose(0, 2, 1, 3).reshape(n * t_out, cin * k)
    go = np.ascontiguousarray(grad_out.transpose(0, 2, 1)).reshape(n * t_out, cout)

    grad_bias = go.sum(axis=0)
    grad_weight = (go.T @ cols).reshape(cout, cin, k)

    # Scatter the per-window gradients back onto the padded input. The K
    # destination slices are disjoint per k, so slice-add is exact.
    gcols = (go @ weight.reshape(cout, cin * k)).reshape(n, t_out, cin, k)
    gcols = gcols.transpose(0, 2, 1, 3)  # (N, Cin, T_out, K)
    gxp = np.zeros_like(xp)
    for kk in range(k):
        gxp[:, :, kk : kk + t_out * stride : stride] += gcols[:, :, :, kk]
    grad_input = gxp[:, :, pad_left : pad_left + t]
    return np.ascontiguousarray(grad_input), grad_weight, grad_bias


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

@dataclass
class BatchNormState:
    """Per-channel scale/shift plus running statistics.

    Running stats are exponential moving averages updated only by
    training-mode forwards: running <- momentum*running + (1-momentum)*batch.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.99

    @classmethod
    def create(cls, channels: int, dtype=np.float32, epsilon: float = 1e-5,
               momentum: float = 0.99) -> "BatchNormState":
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            epsilon=epsilon,
            momentum=momentum,
        )


@dataclass
class BatchNormCtx:
    x_hat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray


def batchnorm_forward(
    x: np.ndarray,
    state: BatchNormState,
    training: bool,
) -> tuple[np.ndarray, BatchNormCtx | None]:
    """Normalize per channel over the batch and time axes jointly.

    Training mode uses batch statistics and updates the running averages;
    inference mode is a deterministic affine map from the running stats.
    """
    if x.ndim != 3:
        raise DimensionError(f"batchnorm expects (N,C,T), got {x.shape}")
    n, c, t = x.shape
    if state.gamma.shape != (c,):
        raise DimensionError(
            f"state has {state.gamma.shape[0]} channels, input has {c}"
        )
    if n * t == 0:
        raise LayerUsageError("batchnorm on an empty batch")

    gamma = state.gamma.reshape(1, c, 1)
    beta = state.beta.reshape(1, c, 1)
    if training:
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        inv_std = 1.0 / np.sqrt(var + state.epsilon)
        x_hat = (x - mean.reshape(1, c, 1)) * inv_std.reshape(1, c, 1)
        m = state.momentum
        state.running_mean[:] = m * state.running_mean + (1.0 - m) * mean
        state.running_var[:] = m * state.running_var + (1.0 - m) * var
        y = gamma * x_hat + beta
        return y, BatchNormCtx(x_hat, inv_std, state.gamma)

    inv_std = 1.0 / np.sqrt(state.running_var + state.epsilon)
    y = gamma * ((x - state.running_mean.reshape(1, c, 1))
                 * inv_std.reshape(1, c, 1)) + beta
    return y, None


def batchnorm_backward(
    grad_out: np.ndarray, ctx: BatchNormCtx | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the training-mode forward, including the dependence of
    the batch statistics on the input."""
    if ctx is None:
        raise LayerUsageError(
            "batchnorm_backward requires a training-mode forward context"
        )
    n, c, t = grad_out.shape
    m = n * t
    x_hat, inv_std = ctx.x_hat, ctx.inv_std

    grad_gamma = (grad_out * x_hat).sum(axis=(0, 2))
    grad_beta = grad_out.sum(axis=(0, 2))

    g_hat = grad_out * ctx.gamma.reshape(1, c, 1)
    s1 = g_hat.sum(axis=(0, 2)).reshape(1, c, 1)
    s2 = (g_hat * x_hat).sum(axis=(0, 2)).reshape(1, c, 1)
    grad_input = (inv_std.reshape(1, c, 1) / m) * (m * g_hat - s1 - x_hat * s2)
    return grad_input, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# activations and pooling
# ---------------------------------------------------------------------------

@dataclass
class ReluCtx:
    mask: np.ndarray


def relu(x: np.ndarray, training: bool = False) -> tuple[np.ndarray, ReluCtx | None]:
    """Elementwise max(0, x). The derivative at exactly 0 is taken as 0."""
    mask = x > 0
    y = np.where(mask, x, x.dtype.type(0))
    return y, (ReluCtx(mask) if training else None)


def relu_backward(grad_out: np.ndarray, ctx: ReluCtx | None) -> np.ndarray:
    if ctx is None:
        raise LayerUsageError("relu_backward called without a forward context")
    return np.where(ctx.mask, grad_out, grad_out.dtype.type(0))


@dataclass
class MaxPoolCtx:
    argmax: np.ndarray
    input_shape: tuple
    kernel: int
    stride: int


def maxpool1d(
    x: np.ndarray,
    kernel: int = 2,
    stride: int = 2,
    training: bool = False,
) -> tuple[np.ndarray, MaxPoolCtx | None]:
    """Windowed maximum along time; ties resolve to the earliest index.

    The time axis must tile exactly into windows (no silent truncation).
    """
    if x.ndim != 3:
        raise DimensionError(f"maxpool expects (N,C,T), got {x.shape}")
    t = x.shape[2]
    if t < kernel or (t - kernel) % stride != 0:
        raise DimensionError(
            f"time axis {t} does not tile into kernel={kernel}, stride={stride} windows"
        )
    windows = sliding_window_view(x, kernel, axis=2)[:, :, ::stride, :]
    argmax = windows.argmax(axis=3)
    y = np.take_along_axis(windows, argmax[..., None], axis=3)[..., 0]
    # window offsets fit in a byte for any realistic kernel
    ctx = (MaxPoolCtx(argmax.astype(np.uint8), x.shape, kernel, stride)
           if training else None)
    return np.ascontiguousarray(y), ctx


def maxpool1d_backward(grad_out: np.ndarray, ctx: MaxPoolCtx | None) -> np.ndarray:
    """Route each window's gradient to its argmax position only."""
    if ctx is None:
        raise LayerUsageError("maxpool1d_backward called without a forward context")
    n, c, t_out = grad_out.shape
    gx = np.zeros(ctx.input_shape, dtype=grad_out.dtype)
    starts = np.arange(t_out) * ctx.stride
    pos = starts.reshape(1, 1, -1) + ctx.argmax
    ni = np.arange(n).reshape(-1, 1, 1)
    ci = np.arange(c).reshape(1, -1, 1)
    np.add.at(gx, (ni, ci, pos), grad_out)
    return gx


@dataclass
class MeanPoolCtx:
    input_length: int


def global_mean_pool(
    x: np.ndarray, training: bool = False
) -> tuple[np.ndarray, MeanPoolCtx | None]:
    """Arithmetic mean over the time axis: (N, C, T) -> (N, C)."""
    if x.ndim != 3:
        raise DimensionError(f"mean pool expects (N,C,T), got {x.shape}")
    y = x.mean(axis=2)
    return y, (MeanPoolCtx(x.shape[2]) if training else None)


def global_mean_pool_backward(
    grad_out: np.ndarray, ctx: MeanPoolCtx | None
) -> np.ndarray:
    if ctx is None:
        raise LayerUsageError("mean pool backward called without a forward context")
    t = ctx.input_length
    return np.repeat(grad_out[:, :, None] / grad_out.dtype.type(t), t, axis=2)


# ---------------------------------------------------------------------------
# dense head and loss
# ---------------------------------------------------------------------------

@dataclass
class DenseCtx:
    x: np.ndarray
    weight: np.ndarray


def dense_forward(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    training: bool = False,
) -> tuple[np.ndarray, DenseCtx | None]:
    """Affine map z = x @ W + b with x (N, F), W (F, K), b (K)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"dense expects (N,{weight.shape[0]}) input, got {x.shape}"
        )
    y = x @ weight + bias
    return y, (DenseCtx(x, weight) if training else None)


def dense_backward(
    grad_out: np.ndarray, ctx: DenseCtx | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if ctx is None:
        raise LayerUsageError("dense_backward called without a forward context")
    grad_input = grad_out @ ctx.weight.T
    grad_weight = ctx.x.T @ grad_out
    grad_bias = grad_out.sum(axis=0)
    return grad_input, grad_weight, grad_bias


def softmax_xent(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stable softmax with per-row cross entropy against one-hot labels.

    Returns (probs, per_row_loss, grad_logits) where grad_logits = probs -
    labels, unscaled; batch weighting is the caller's job.
    """
    if logits.shape != labels.shape:
        raise DimensionError(
            f"logits {logits.shape} and labels {labels.shape} must match"
        )
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    loss = -(labels * np.log(np.maximum(probs, LOG_FLOOR))).sum(axis=1)
    grad_logits = probs - labels
    return probs, loss, grad_logits


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= num_classes:
        raise DimensionError(
            f"labels outside [0, {num_classes}): {labels.min()}..{labels.max()}"
        )
    out = np.zeros((labels.shape[0], num_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1
    return out
