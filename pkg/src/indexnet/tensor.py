"""Dense NCHW tensors with reverse-mode differentiation.

Every tensor is 4-D ``(batch, channel, height, width)``; scalars are stored as
``(1, 1, 1, 1)``. Operations in :mod:`indexnet.ops` build the graph by
attaching a backward closure and the parent tensors to each result;
:func:`backward` walks that graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_PRECISIONS = {"f32": np.float32, "f64": np.float64}


class _ThreadState(threading.local):
    # per thread, so concurrent training runs cannot toggle each other's grad mode
    def __init__(self):
        self.dtype = np.float32
        self.grad = True


_state = _ThreadState()
# Test hook: ops named here get a deliberately wrong backward.
_corrupted_ops: set[str] = set()

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def default_dtype() -> type:
    return _state.dtype


def current_precision() -> str:
    """Name of the active precision mode in this thread."""
    return next(k for k, v in _PRECISIONS.items() if v is _state.dtype)


@contextlib.contextmanager
def precision(mode: str) -> Iterator[None]:
    """Temporarily switch the dtype used for new tensors (``"f32"`` or ``"f64"``)."""
    if mode not in _PRECISIONS:
        raise ContractError(f"unknown precision {mode!r}; expected one of {sorted(_PRECISIONS)}")
    previous = _state.dtype
    _state.dtype = _PRECISIONS[mode]
    try:
        yield
    finally:
        _state.dtype = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording, e.g. during evaluation."""
    previous = _state.grad
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = previous


def grad_enabled() -> bool:
    return _state.grad


@contextlib.contextmanager
def corrupt_backward(*op_names: str) -> Iterator[None]:
    """Scale the backward of the named ops by 1.5 (negative control for gradient checks)."""
    added = set(op_names) - _corrupted_ops
    _corrupted_ops.update(added)
    try:
        yield
    finally:
        _corrupted_ops.difference_update(added)


def _corrupt(fn: BackwardFn) -> BackwardFn:
    def wrong(g):
        return [None if pg is None else 1.5 * pg for pg in fn(g)]

    return wrong


class Tensor:
    """A 4-D array that optionally records how it was computed."""

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple[Tensor, ...] = (),
        _backward: BackwardFn | None = None,
        _op: str = "",
    ):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(default_dtype())
        if arr.ndim != 4:
            raise DimensionError(f"tensors are 4-D (N, C, H, W); got shape {arr.shape}")
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    @classmethod
    def from_op(
        cls, data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn, op: str
    ) -> Tensor:
        """Wrap an op result, recording the graph edge only when something needs gradients."""
        if grad_enabled() and any(p.requires_grad for p in parents):
            if op in _corrupted_ops:
                backward = _corrupt(backward)
            return cls(data, requires_grad=True, _parents=parents, _backward=backward, _op=op)
        return cls(data)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element; shape is {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> dict[Tensor, np.ndarray]:
        return backward(self)

    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import ops

        return ops.add(self, ops.scale(other, -1.0))

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def __repr__(self) -> str:
        tag = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"


class Parameter(Tensor):
    """A trainable leaf tensor."""

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=_float_dtype(data)), requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"


def _float_dtype(data):
    arr = np.asarray(data)
    return arr.dtype if arr.dtype in (np.float32, np.float64) else default_dtype()


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Returns the gradients contributed by this call, keyed by leaf tensor.
    """
    if loss.shape != (1, 1, 1, 1):
        raise ContractError(f"backward() needs a scalar (1, 1, 1, 1) loss; got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    contributed: dict[Tensor, np.ndarray] = {}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            contributed[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.data.shape:
                raise DimensionError(
                    f"{node._op} backward produced shape {pg.shape} for a parent of shape {parent.shape}"
                )
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return contributed
