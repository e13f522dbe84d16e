"""
Differentiable tensor operations.

Every op computes its forward result with numpy in float64, reports
multiply-accumulates to any active MacCounter (matmul and conv1d only) and
registers a backward rule on the active Tape.
"""

import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from redapt.lengths import reduced_length
from redapt.tensor.core import Tensor, as_tensor, count_macs, make_result
from redapt.utils.errors import ShapeError, TargetRangeError
from redapt.utils.seeding import counter_rng

logger = logging.getLogger(__name__)

# sqrt(2 / pi), pinned for the tanh approximation of GELU
GELU_TANH_COEFF = 0.7978845608
GELU_CUBIC_COEFF = 0.044715


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'add')

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result('add', a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'sub')

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result('sub', a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'mul')

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result('mul', a.data * b.data, (a, b), backward)


def matmul(a, b, name='matmul'):
    """
    Matrix product with numpy batching rules over leading dimensions.

    Args:
        a: Tensor [..., m, k]
        b: Tensor [..., k, n]
        name: key under which MACs are counted

    Returns:
        Tensor [..., m, n]; counts prod(batch) * m * n * k MACs
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch dimensions do not broadcast: {a.shape} x {b.shape}") from None

    m, k = a.shape[-2], a.shape[-1]
    n = b.shape[-1]
    count_macs(name, int(np.prod(batch, dtype=np.int64)) * m * n * k)

    def backward(g):
        grad_a = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        grad_b = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return grad_a, grad_b

    return make_result(name, np.matmul(a.data, b.data), (a, b), backward)


def conv1d(x, w, bias, spec, name='conv1d'):
    """
    Zero-padded strided 1-D convolution over the time axis.

    Args:
        x: Tensor [b, t, c_in]
        w: Tensor [k, c_in, c_out]
        bias: Tensor [c_out] or None
        spec: ReductionSpec (k must match w.shape[0])
        name: key under which MACs are counted

    Returns:
        Tensor [b, t', c_out] with t' = reduced_length(t, spec);
        counts b * t' * k * c_in * c_out MACs

    Raises:
        SequenceLengthError: if t + 2p < k
    """
    if x.ndim != 3:
        raise ShapeError(f"conv1d expects x of shape [b, t, c_in], got {x.shape}")
    if w.ndim != 3:
        raise ShapeError(f"conv1d expects w of shape [k, c_in, c_out], got {w.shape}")
    k, c_in, c_out = w.shape
    batch, t, x_channels = x.shape
    if x_channels != c_in:
        raise ShapeError(f"conv1d channel mismatch: x {x.shape} vs w {w.shape}")
    if k != spec.k:
        raise ShapeError(f"conv1d kernel {spec.k} does not match weight shape {w.shape}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv1d bias shape {bias.shape} does not match c_out={c_out}")

    t_out = reduced_length(t, spec, where=name)
    s, p = spec.s, spec.p
    padded = np.pad(x.data, ((0, 0), (p, p), (0, 0))) if p else x.data
    windows = sliding_window_view(padded, k, axis=1)[:, ::s][:, :t_out]
    # [b, t', c_in, k] -> rows of (k, c_in) matching w's layout
    cols = windows.transpose(0, 1, 3, 2).reshape(batch * t_out, k * c_in)
    w_mat = w.data.reshape(k * c_in, c_out)
    out = (cols @ w_mat).reshape(batch, t_out, c_out)
    if bias is not None:
        out = out + bias.data
    count_macs(name, batch * t_out * k * c_in * c_out)

    def backward(g):
        g2 = g.reshape(batch * t_out, c_out)
        grad_w = (cols.T @ g2).reshape(k, c_in, c_out)
        grad_cols = (g2 @ w_mat.T).reshape(batch, t_out, k, c_in)
        grad_padded = np.zeros_like(padded)
        span = s * (t_out - 1) + 1
        for j in range(k):
            grad_padded[:, j:j + span:s, :] += grad_cols[:, :, j, :]
        grad_x = grad_padded[:, p:p + t, :]
        grad_bias = g2.sum(axis=0) if bias is not None else None
        return grad_x, grad_w, grad_bias

    inputs = (x, w, bias if bias is not None else Tensor(np.zeros(c_out)))
    return make_result(name, out, inputs, backward)


def layernorm(x, gain, bias, eps=1e-5):
    """
    Normalize over the last axis to zero mean / unit variance, then apply ``gain`` and ``bias``.
    """
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(f"layernorm affine shapes {gain.shape}/{bias.shape} do not match input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    n = x.shape[-1]

    def backward(g):
        reduce_axes = tuple(range(g.ndim - 1))
        grad_gain = (g * x_hat).sum(axis=reduce_axes)
        grad_bias = g.sum(axis=reduce_axes)
        d_xhat = g * gain.data
        grad_x = (inv_std / n) * (
            n * d_xhat
            - d_xhat.sum(axis=-1, keepdims=True)
            - x_hat * (d_xhat * x_hat).sum(axis=-1, keepdims=True)
        )
        return grad_x, grad_gain, grad_bias

    return make_result('layernorm', x_hat * gain.data + bias.data, (x, gain, bias), backward)


def gelu(x):
    """GELU, tanh approximation."""
    u = GELU_TANH_COEFF * (x.data + GELU_CUBIC_COEFF * x.data ** 3)
    th = np.tanh(u)

    def backward(g):
        du = GELU_TANH_COEFF * (1.0 + 3.0 * GELU_CUBIC_COEFF * x.data ** 2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x.data * (1.0 - th ** 2) * du),)

    return make_result('gelu', 0.5 * x.data * (1.0 + th), (x,), backward)


def softmax_lastaxis(x):
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_result('softmax', y, (x,), backward)


def sum(x, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result('sum', out, (x,), backward)


def mean(x, axis=None, keepdims=False):
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.size // max(out.size, 1)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return make_result('mean', out, (x,), backward)


def transpose(x, axes=None):
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return make_result('transpose', np.transpose(x.data, axes), (x,), backward)


def reshape(x, shape):
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from None

    def backward(g):
        return (g.reshape(x.shape),)

    return make_result('reshape', out, (x,), backward)


def dropout(x, p, train_flag, seed=0, layer_id=0, step=0):
    """
    Inverted dropout with a mask drawn from a counter-based stream keyed by (seed, layer_id, step).

    Identity (the same tensor) when ``train_flag`` is false or ``p`` is 0.
    """
    if not train_flag or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    keep = counter_rng(seed, layer_id, step).random(x.shape) >= p
    scale = keep / (1.0 - p)

    def backward(g):
        return (g * scale,)

    return make_result('dropout', x.data * scale, (x,), backward)


def cross_entropy_label_smoothed(logits, target, smoothing=0.0):
    """
    Mean label-smoothed cross-entropy.

    The target distribution puts (1 - smoothing) on the gold class and
    spreads ``smoothing`` uniformly over all classes.

    Args:
        logits: Tensor [b, n_classes]
        target: int array [b]
        smoothing: label smoothing in [0, 1)

    Returns:
        scalar Tensor
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects logits [b, classes], got {logits.shape}")
    target = np.asarray(target, dtype=np.int64).reshape(-1)
    batch, n_classes = logits.shape
    if target.shape[0] != batch:
        raise ShapeError(f"cross_entropy: {target.shape[0]} targets for {batch} rows")
    bad = (target < 0) | (target >= n_classes)
    if np.any(bad):
        raise TargetRangeError(
            f"cross_entropy target {int(target[bad][0])} out of range [0, {n_classes})"
        )

    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_z
    q = np.full((batch, n_classes), smoothing / n_classes)
    q[np.arange(batch), target] += 1.0 - smoothing
    loss = -(q * log_probs).sum() / batch

    def backward(g):
        return (g * (np.exp(log_probs) - q) / batch,)

    return make_result('cross_entropy', np.asarray(loss), (logits,), backward)
