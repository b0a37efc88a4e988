"""A small reverse-mode automatic differentiation engine on top of numpy.

Every differentiable operation creates a new :class:`Tensor` holding a
closure that maps the output gradient to one gradient per parent.
:meth:`Tensor.backward` walks the graph in reverse topological order and
accumulates gradients into ``.grad``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class _GateLog:
    """Switch decisions of piecewise-linear ops (ReLU masks, pooling argmaxes).

    In "record" mode each decision is appended in call order; in "replay"
    mode the recorded decisions are substituted in the same order, which
    freezes the network on one linear piece.
    """

    def __init__(self):
        self.mode: str | None = None
        self.entries: list[np.ndarray] = []
        self.pos = 0


_GATES = _GateLog()


def gate(decision: np.ndarray) -> np.ndarray:
    """Return ``decision``, recording it or replacing it by the recorded one."""
    if _GATES.mode == "record":
        _GATES.entries.append(decision)
    elif _GATES.mode == "replay":
        if _GATES.pos >= len(_GATES.entries):
            raise ContractError("gate replay ran past the recorded decisions")
        recorded = _GATES.entries[_GATES.pos]
        if recorded.shape != decision.shape:
            raise ShapeError(f"gate replay shape {recorded.shape} != {decision.shape}")
        _GATES.pos += 1
        return recorded
    return decision


@contextlib.contextmanager
def gate_mode(mode: str, entries: list[np.ndarray] | None = None):
    """Record decisions into a fresh list (yielded) or replay ``entries``."""
    if mode not in ("record", "replay"):
        raise ContractError(f"unknown gate mode {mode!r}")
    previous = (_GATES.mode, _GATES.entries, _GATES.pos)
    _GATES.mode, _GATES.pos = mode, 0
    _GATES.entries = [] if mode == "record" else entries
    try:
        yield _GATES.entries
    finally:
        _GATES.mode, _GATES.entries, _GATES.pos = previous


def _as_array(value, dtype=None) -> np.ndarray:
    arr = np.asarray(value, dtype=dtype)
    if dtype is None and arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense array with an optional gradient and a link to its producers."""

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- construction helpers ------------------------------------------------

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Iterable["Tensor"], backward) -> "Tensor":
        parents = tuple(parents)
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out = cls.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = needs
        if needs:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

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
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- backward --------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(t) into ``t.grad`` for every tensor ``t`` upstream."""
        if grad is None:
            if self.data.size != 1:
                raise ContractError(
                    f"backward() without a seed gradient needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.shape:
            raise ShapeError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- arithmetic --------------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = ensure_tensor(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape
        return Tensor.from_op(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        other = ensure_tensor(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape
        return Tensor.from_op(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), -_unbroadcast(g, b_shape)),
        )

    def __rsub__(self, other) -> "Tensor":
        return ensure_tensor(other, self.dtype) - self

    def __mul__(self, other) -> "Tensor":
        other = ensure_tensor(other, self.dtype)
        a, b = self.data, other.data
        return Tensor.from_op(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return self * other ** -1.0
        return self * (1.0 / other)

    def __pow__(self, exponent: float) -> "Tensor":
        a = self.data
        return Tensor.from_op(
            a ** exponent, (self,), lambda g: (g * exponent * a ** (exponent - 1),)
        )

    def __matmul__(self, other: "Tensor") -> "Tensor":
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul needs (n,k)@(k,m), got {a.shape} @ {b.shape}")
        return Tensor.from_op(a @ b, (self, other), lambda g: (g @ b.T, a.T @ g))

    # -- reductions and reshaping ----------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor.from_op(
            np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), backward
        )

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor.from_op(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    def flatten(self) -> "Tensor":
        """Collapse all but the leading (batch) axis."""
        return self.reshape(self.shape[0], -1)

    def __getitem__(self, index) -> "Tensor":
        shape, dtype = self.shape, self.dtype

        basic = all(isinstance(i, (slice, int)) or i is Ellipsis
                    for i in (index if isinstance(index, tuple) else (index,)))

        def backward(g):
            full = np.zeros(shape, dtype=dtype)
            if basic:
                full[index] += g
            else:
                np.add.at(full, index, g)
            return (full,)

        return Tensor.from_op(np.array(self.data[index]), (self,), backward)

    def relu(self) -> "Tensor":
        mask = gate(self.data > 0)
        return Tensor.from_op(self.data * mask, (self,), lambda g: (g * mask,))


class Parameter(Tensor):
    """A trainable tensor with a unique dotted name.

    ``regularize`` is False for biases, which stay out of the weight penalty.
    """

    def __init__(self, data, name: str, regularize: bool = True, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.regularize = regularize

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def ensure_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype if dtype is not None else np.float64))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along ``axis``; the gradient is split back."""
    tensors = tuple(tensors)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor.from_op(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack_sum(terms: Sequence[Tensor]) -> Tensor:
    """Sum a list of same-shape tensors with a single graph node."""
    data = terms[0].data.copy()
    for t in terms[1:]:
        data = data + t.data
    return Tensor.from_op(data, terms, lambda g: tuple(g for _ in terms))
