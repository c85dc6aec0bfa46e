"""Tensor and tape primitives for reverse-mode differentiation.

A ``Tape`` records every operation whose output needs a gradient, in the
order the operations run.  Because an operation can only consume tensors
that already exist, creation order is a valid topological order, and the
backward pass simply walks the record in reverse.

Operations executed while no tape is active (or on inputs that do not
require gradients) only compute values; this is the inference fast path.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when a kernel receives operands with incompatible shapes."""


class Tensor:
    """Dense array with an optional gradient slot."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def item(self):
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else None

    def numpy(self):
        return self.value

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"


def constant(value):
    """Wrap a value as a non-differentiable tensor."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(value, name=None):
    t = Tensor(value, requires_grad=True, name=name)
    t.zero_grad()
    return t


def detach(x):
    """Return a leaf copy of ``x`` that blocks all upstream gradient flow."""
    return Tensor(np.array(x.value, copy=True))


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; nested tapes are not supported.
    """

    _active = None

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        if Tape._active is not None:
            raise RuntimeError("a tape is already recording")
        Tape._active = self
        return self

    def __exit__(self, *exc):
        Tape._active = None
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, parents, backward):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        self.nodes.append(out)
        return out

    def backward(self, loss):
        """Populate ``grad`` on every tracked tensor with d(loss)/d(tensor)."""
        if loss.value.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            return
        loss.accumulate(np.ones_like(loss.value))
        for node in reversed(self.nodes):
            if node.grad is None:
                continue
            node._backward(node.grad)
            node._backward = None
        self.nodes = []


def active_tape():
    return Tape._active


def backward(tape, loss):
    tape.backward(loss)
