"""
Central finite-difference gradient checks.
"""

import numpy as np

from redapt.tensor.core import Tape


def numerical_grad(fn, tensor, h=1e-5):
    """
    Central-difference gradient of scalar ``fn()`` with respect to ``tensor.data``.

    ``fn`` is evaluated outside any tape and must read ``tensor.data`` afresh
    on every call.
    """
    tensor.data = np.ascontiguousarray(tensor.data)
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = fn().item()
        flat[i] = original - h
        minus = fn().item()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def analytic_grads(fn, tensors):
    """Gradients of scalar ``fn()`` for each tensor via the tape."""
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    return [t.grad for t in tensors]


def max_relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| / max(|a|, |n|, floor) over all elements."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradcheck(fn, tensors, h=1e-5, floor=1e-6):
    """
    Compare tape gradients with central differences.

    Args:
        fn: zero-argument callable returning a scalar Tensor built from ``tensors``
        tensors: leaf tensors to check
        h: finite-difference step
        floor: denominator floor of the relative error

    Returns:
        float: worst relative error across all tensors
    """
    grads = analytic_grads(fn, tensors)
    worst = 0.0
    for t, g in zip(tensors, grads):
        worst = max(worst, max_relative_error(g, numerical_grad(fn, t, h=h), floor=floor))
    return worst
