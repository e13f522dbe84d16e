"""
Dense fp64 tensor with tape-based reverse-mode differentiation.

Provides the Tensor value type, the Tape that records differentiable
operations, the MacCounter used as the cost-model oracle and the
AllocationTracker used by the benchmark harness.

Recording is opt-in: operations only build a graph inside a ``with Tape():``
block. Outside a tape every result is a constant, which is what inference
and benchmarking want.
"""

import logging
import threading
import weakref
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from redapt.utils.errors import GradientError

logger = logging.getLogger(__name__)

# Tapes, counters, trackers and MAC sections are confined to the thread that opened them
_state = threading.local()


def _stack(name):
    stack = getattr(_state, name, None)
    if stack is None:
        stack = []
        setattr(_state, name, stack)
    return stack


class Tensor:
    """
    Dense float64 array with an optional gradient buffer.

    Args:
        data: array-like; converted to float64 (ndarrays of that dtype are shared, not copied)
        requires_grad: whether backward() should populate ``grad`` for this tensor
        name: optional label used in error messages and checkpoints
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._tape = None
        self._node = None
        _track_allocation(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._tape is None

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" '{self.name}'" if self.name else ""
        return f"<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>"

    # Operator sugar; the differentiable definitions live in redapt.tensor.ops
    def __add__(self, other):
        from redapt.tensor import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from redapt.tensor import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from redapt.tensor import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from redapt.tensor import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from redapt.tensor import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from redapt.tensor import ops
        return ops.matmul(self, other)


def as_tensor(value):
    """Wrap numbers/arrays as constant tensors; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


@dataclass
class TapeRecord:
    """One recorded operation: its output, its inputs and the rule mapping dOut to dInputs."""

    op: str
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward: Callable[[np.ndarray], tuple]


class Tape:
    """
    Ordered record of differentiable operations.

    Use as a context manager; operations executed inside the block whose
    inputs require gradients are appended in execution order, so the list
    is topologically sorted by construction.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        _stack('tapes').append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _stack('tapes')
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    def record(self, op, output, inputs, backward_fn):
        output._tape = self
        output._node = len(self.records)
        self.records.append(TapeRecord(op, output, tuple(inputs), backward_fn))

    def clear(self):
        self.records = []

    def backward(self, loss):
        """
        Populate ``grad`` on every requires_grad leaf reached from ``loss``.

        Records are visited in exact reverse recording order. Leaf gradients
        are overwritten, not accumulated; leaves on the tape that the loss
        does not depend on get zero gradients.

        Args:
            loss: scalar Tensor produced on this tape
        """
        if loss.ndim != 0:
            raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise GradientError("loss was not recorded on this tape (run the forward pass inside the Tape block)")

        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for record in reversed(self.records[: loss._node + 1]):
            for inp in record.inputs:
                if inp.requires_grad and inp._tape is None:
                    leaves[id(inp)] = inp
            grad_out = grads.pop(id(record.output), None)
            if grad_out is None:
                continue
            input_grads = record.backward(grad_out)
            for inp, grad_in in zip(record.inputs, input_grads):
                if grad_in is None or not inp.requires_grad:
                    continue
                if inp._tape is not None and inp._tape is not self:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + grad_in
                else:
                    grads[key] = grad_in

        for key, leaf in leaves.items():
            grad = grads.get(key)
            leaf.grad = np.zeros_like(leaf.data) if grad is None else np.asarray(grad, dtype=np.float64).reshape(leaf.shape)
        logger.debug(f"backward over {len(self.records)} records, {len(leaves)} leaves")


def current_tape():
    stack = _stack('tapes')
    return stack[-1] if stack else None


def backward(loss):
    """Run backward on the tape that produced ``loss``."""
    if loss._tape is None:
        raise GradientError("loss is not on a tape; wrap the forward pass in `with Tape():`")
    loss._tape.backward(loss)


class MacCounter:
    """
    Multiply-accumulate counter used as the oracle for the closed-form cost model.

    Counting never touches numeric results. Keys in ``per_op`` are the op
    name prefixed by any active ``mac_section`` names, e.g.
    ``"layer3/attention_scores"``.
    """

    def __init__(self):
        self.per_op = {}

    def __enter__(self):
        _stack('counters').append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _stack('counters')
        if stack and stack[-1] is self:
            stack.pop()
        return False

    @property
    def total_macs(self):
        return sum(self.per_op.values())

    def add(self, op, macs):
        key = '/'.join(_stack('sections') + [op])
        self.per_op[key] = self.per_op.get(key, 0) + int(macs)

    def total(self, prefix=None, op=None):
        """
        Sum MACs over keys matching a section prefix and/or an op name.

        Args:
            prefix: keep keys starting with ``prefix + '/'``
            op: keep keys whose final component equals ``op``
        """
        total = 0
        for key, macs in self.per_op.items():
            if prefix is not None and not key.startswith(prefix + '/'):
                continue
            if op is not None and key.rsplit('/', 1)[-1] != op:
                continue
            total += macs
        return total


def count_macs(op, macs):
    for counter in _stack('counters'):
        counter.add(op, macs)


@contextmanager
def mac_section(name):
    """Prefix MAC keys recorded inside the block with ``name``."""
    sections = _stack('sections')
    sections.append(name)
    try:
        yield
    finally:
        sections.pop()


class AllocationTracker:
    """
    Tracks tensor elements allocated while active.

    ``current`` drops when tensors are garbage collected, so ``peak`` is the
    largest number of simultaneously live tensor elements.
    """

    def __init__(self):
        self.current = 0
        self.peak = 0
        self.total = 0

    def __enter__(self):
        _stack('trackers').append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _stack('trackers')
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def _allocate(self, n):
        self.current += n
        self.total += n
        if self.current > self.peak:
            self.peak = self.current

    def _release(self, n):
        self.current -= n


def _track_allocation(tensor):
    trackers = getattr(_state, 'trackers', None)
    if not trackers:
        return
    n = int(tensor.data.size)
    for tracker in trackers:
        tracker._allocate(n)
        weakref.finalize(tensor, tracker._release, n)


def make_result(op, data, inputs, backward_fn):
    """
    Wrap an op result and record it when a tape is active and any input needs grads.

    Args:
        op: operation name for the tape record
        data: output ndarray
        inputs: input tensors, in the order ``backward_fn`` returns gradients
        backward_fn: maps dOutput to a tuple of dInput (None for no gradient)
    """
    tape = current_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad:
        tape.record(op, out, inputs, backward_fn)
    return out
