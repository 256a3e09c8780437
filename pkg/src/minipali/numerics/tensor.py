"""Immutable tensors and the operation tape used for reverse-mode gradients."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when an op receives inputs with incompatible shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        shown = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    """A read-only n-d array, optionally named when it stands for a parameter."""

    __slots__ = ("data", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype.kind in "iub":
            arr = arr.astype(DEFAULT_DTYPE)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"tensor {name or ''} built from non-finite values")
        arr.flags.writeable = False
        self.data = arr
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr).view()
        arr.flags.writeable = False
        t.data = arr
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __len__(self) -> int:
        return self.shape[0]

    # arithmetic sugar; the real work lives in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    forward: Callable[..., np.ndarray]
    vjp: Callable[[np.ndarray, tuple[bool, ...]], Sequence[np.ndarray | None]]
    needs: tuple[bool, ...]


@dataclass(eq=False)
class Tape:
    """Ordered record of operations executed while the tape is active.

    Nodes are appended in execution order, which is already a topological
    order, so reverse traversal needs no sorting.
    """

    nodes: list[Node] = field(default_factory=list)
    leaves: dict[str, Tensor] = field(default_factory=dict)
    _produced: dict[int, int] = field(default_factory=dict)
    _tracked: set[int] = field(default_factory=set)

    def watch(self, name: str, value) -> Tensor:
        """Register a named leaf (a parameter) whose gradient should be reported."""
        if name in self.leaves:
            raise KeyError(f"parameter {name!r} already watched on this tape")
        t = value if isinstance(value, Tensor) else Tensor(value)
        leaf = Tensor._wrap(t.data)
        leaf.name = name
        self.leaves[name] = leaf
        self._tracked.add(id(leaf))
        return leaf

    def tracks(self, t: Tensor) -> bool:
        """True if ``t`` depends on a watched leaf."""
        return id(t) in self._tracked

    def record(self, node: Node) -> None:
        self._produced[id(node.output)] = len(self.nodes)
        self._tracked.add(id(node.output))
        self.nodes.append(node)

    def produced(self, t: Tensor) -> bool:
        idx = self._produced.get(id(t))
        return idx is not None and self.nodes[idx].output is t

    def replay(self) -> bool:
        """Re-run every recorded op from its recorded leaves; True if bit-exact."""
        values: dict[int, np.ndarray] = {}
        for node in self.nodes:
            args = [values.get(id(x), x.data) for x in node.inputs]
            out = node.forward(*args)
            if out.shape != node.output.shape or not np.array_equal(out, node.output.data):
                return False
            values[id(node.output)] = out
        return True

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()


_local = threading.local()


def _stack() -> list[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DEFAULT_DTYPE))


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every leaf watched on ``tape``.

    Leaves that do not influence the loss get zero arrays of their own shape.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not tape.produced(loss):
        raise ValueError("backward: loss was not produced by an op on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.vjp(g, node.needs)
        for x, need, gx in zip(node.inputs, node.needs, in_grads):
            if not need or gx is None:
                continue
            key = id(x)
            if key in grads:
                grads[key] = grads[key] + gx
            else:
                grads[key] = gx

    out = {}
    for name, leaf in tape.leaves.items():
        g = grads.get(id(leaf))
        out[name] = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
    return out
