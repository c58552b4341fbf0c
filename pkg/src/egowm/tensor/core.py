"""Dense tensor values with reverse-mode gradient tracking.

Everything downstream (encoders, diffusion backbone, codec) is built from
the ops in :mod:`egowm.tensor.ops`, which create nodes of this tape. Values
are float32 by default; verification suites run the same graphs in float64.
"""

from __future__ import annotations

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)


class GradientModeError(RuntimeError):
    """Raised when backward() is called on an invalid node."""


_grad_enabled = True


class no_grad:
    """Context manager disabling tape construction (eval / rollout paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense row-major n-d array plus an optional backward closure.

    ``data`` is always a C-contiguous float32 or float64 ndarray. A tensor
    participates in autodiff when ``requires_grad`` is set, either directly
    (parameters) or inherited from a parent.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"

    # -- operator sugar (implemented in ops to keep the tape in one place)
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops

        return ops.add(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops

        return ops.mul(other, self)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    # -- reverse mode --------------------------------------------------
    def backward(self) -> None:
        """Backpropagate from a scalar loss through the recorded tape."""
        if self.data.size != 1:
            raise GradientModeError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, pgrad in zip(node._parents, parent_grads):
                if pgrad is None or not parent.requires_grad:
                    continue
                if pgrad.shape != parent.data.shape:
                    raise GradientModeError(
                        f"gradient shape {pgrad.shape} does not match value shape "
                        f"{parent.data.shape}"
                    )
                if parent.grad is None:
                    parent.grad = pgrad.astype(parent.data.dtype, copy=True)
                else:
                    parent.grad += pgrad
            if node._parents:
                node.grad = None  # free intermediate buffers


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


class Parameter(Tensor):
    """Named learnable tensor; its gradient buffer survives backward passes."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def make_node(data: np.ndarray, parents: tuple, backward) -> Tensor:
    """Create a tape node; drops the closure when no parent needs gradients."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value, dtype=dtype)
    if arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float32 if dtype is None else dtype)
    return Tensor(arr)


def grad(loss_fn, params: list[Parameter]) -> list[np.ndarray]:
    """Evaluate ``loss_fn()`` and return gradients for ``params`` in order.

    The loss must be a scalar Tensor built from library ops.
    """
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise GradientModeError("loss function must return a scalar Tensor")
    loss.backward()
    return [
        p.grad if p.grad is not None else np.zeros_like(p.data) for p in params
    ]
