"""Dense tensors with tape-based reverse-mode differentiation.

A :class:`Tape` records every primitive applied to a tensor that requires a
gradient while the tape is active.  ``Tape.backward`` walks the recording in
exact reverse order and accumulates gradients into the leaf tensors.

Example
-------
>>> w = Tensor([1.0, 2.0], requires_grad=True)
>>> with Tape() as tape:
...     loss = sum_all(mul(w, w))
>>> tape.backward(loss)
>>> w.grad.tolist()
[2.0, 4.0]
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .exceptions import DomainError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "tanh",
    "relu",
    "sigmoid",
    "elementwise",
    "softmax",
    "log_softmax",
    "cross_entropy_loss",
    "sum_all",
    "mean",
    "sum_axis",
    "reshape",
    "concat",
    "split_last",
    "outer",
    "embedding",
]

_ACTIVE: list["Tape"] = []


class Tensor:
    """Row-major float64 array plus an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if 0 in arr.shape:
            raise ShapeError(f"tensor dims must be positive, got {list(arr.shape)}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name

    @property
    def dims(self) -> list[int]:
        return list(self.data.shape)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(dims={self.dims}{label})"


def _not_scalar(t: Tensor):
    raise DomainError(f"expected a scalar tensor, got dims {t.dims}")


class Tape:
    """Records primitive operations for a single backward pass.

    Use as a context manager; operations are only recorded while the tape is
    the innermost active one.
    """

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._ids: set[int] = set()

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        self.entries.append((out, inputs, vjp))
        self._ids.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf tensor."""
        if loss.data.size != 1:
            raise DomainError(f"backward needs a scalar loss, got dims {loss.dims}")
        if id(loss) not in self._ids:
            raise DomainError("loss was not recorded on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, vjp in reversed(self.entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if id(inp) in self._ids:
                    if id(inp) in grads:
                        grads[id(inp)] = grads[id(inp)] + gi
                    else:
                        grads[id(inp)] = gi
                else:
                    if inp.grad is None:
                        inp.grad = np.zeros_like(inp.data)
                    inp.grad += gi


def _tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = needs
    out.grad = None
    out.name = None
    tape = _tape()
    if needs and tape is not None:
        tape.record(out, tuple(inputs), vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        shape = None
    if shape is None or shape not in (a.shape, b.shape):
        raise ShapeError(f"cannot broadcast dims {a.dims} and {b.dims}")
    return shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading batch axes of ``a`` are carried through."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 1 or b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul dims mismatch: {a.dims} x {b.dims}")
    A, B = a.data, b.data

    def vjp(g):
        ga = g @ B.T
        gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _result(A @ B, (a, b), vjp)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b)
    A, B = a.data, b.data
    return _result(
        A * B, (a, b), lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape))
    )


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def neg(a) -> Tensor:
    return scale(a, -1.0)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    # gradient at exactly 0 is 0
    on = a.data > 0
    return _result(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


_ELEMENTWISE = {"add": add, "mul": mul, "sub": sub, "tanh": tanh, "relu": relu, "sigmoid": sigmoid}


def elementwise(op: str, *inputs, factor: float | None = None) -> Tensor:
    """Dispatch by name: ``add``, ``mul``, ``sub``, ``tanh``, ``relu``, ``sigmoid`` or ``scale``."""
    if op == "scale":
        if factor is None:
            raise DomainError("scale requires a factor")
        return scale(inputs[0], factor)
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise DomainError(f"unknown elementwise op {op!r}") from None
    return fn(*inputs)


def softmax(logits, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    if not isinstance(logits, Tensor) and np.size(logits) == 0:
        raise DomainError("softmax of an empty input")
    x = _as_tensor(logits)
    if x.data.ndim == 0 or x.shape[axis] == 0:
        raise DomainError("softmax of an empty input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), vjp)


def log_softmax(logits, axis: int = -1) -> Tensor:
    x = _as_tensor(logits)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _result(y, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def cross_entropy_loss(scores, target) -> Tensor:
    """Mean of ``-log softmax(scores)[target]`` over the batch.

    ``scores`` is ``[D]`` with an integer target, or ``[N, D]`` with ``N``
    targets.
    """
    s = _as_tensor(scores)
    single = s.data.ndim == 1
    S = s.data[None, :] if single else s.data
    t = np.atleast_1d(np.asarray(target))
    if S.ndim != 2 or t.shape != (S.shape[0],):
        raise ShapeError(f"scores dims {s.dims} do not match {t.size} targets")
    if not np.issubdtype(t.dtype, np.integer):
        raise DomainError("target indices must be integers")
    n, d = S.shape
    if np.any(t < 0) or np.any(t >= d):
        raise DomainError(f"target index out of range [0, {d})")
    z = S - S.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(lse - z[rows, t]))
    p = np.exp(z - lse[:, None])

    def vjp(g):
        grad = p.copy()
        grad[rows, t] -= 1.0
        grad *= g / n
        return (grad[0] if single else grad,)

    return _result(np.array(loss), (s,), vjp)


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    return _result(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    if axis is None:
        n = a.data.size
        return _result(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, g / n),))
    n = shape[axis]

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

    return _result(a.data.mean(axis=axis), (a,), vjp)


def sum_axis(a, axis: int) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    return _result(
        a.data.sum(axis=axis), (a,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)
    )


def reshape(a, dims: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    try:
        out = a.data.reshape(tuple(dims))
    except ValueError:
        raise ShapeError(f"cannot reshape {a.dims} to {list(dims)}") from None
    return _result(out, (a,), lambda g: (g.reshape(shape),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError(f"cannot concatenate dims {[p.dims for p in parts]}") from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _result(out, tuple(parts), lambda g: tuple(np.split(g, bounds, axis=axis)))


def split_last(a, n: int) -> list[Tensor]:
    """Split the last axis into ``n`` equal chunks."""
    a = _as_tensor(a)
    width = a.shape[-1]
    if n < 1 or width % n:
        raise ShapeError(f"last dim {width} not divisible into {n} chunks")
    step = width // n
    out = []
    for k in range(n):
        lo = k * step

        def vjp(g, lo=lo):
            full = np.zeros(a.shape)
            full[..., lo : lo + step] = g
            return (full,)

        out.append(_result(a.data[..., lo : lo + step].copy(), (a,), vjp))
    return out


def outer(a, b) -> Tensor:
    """Row-wise flattened outer product: ``[N, m] x [N, n] -> [N, m*n]``."""
    a, b = _as_tensor(a), _as_tensor(b)
    A, B = a.data, b.data
    if A.shape[:-1] != B.shape[:-1]:
        raise ShapeError(f"outer needs matching leading dims: {a.dims} vs {b.dims}")
    m, n = A.shape[-1], B.shape[-1]
    out = (A[..., :, None] * B[..., None, :]).reshape(A.shape[:-1] + (m * n,))

    def vjp(g):
        G = g.reshape(A.shape[:-1] + (m, n))
        return (G @ B[..., :, None])[..., 0], (A[..., None, :] @ G)[..., 0, :]

    return _result(out, (a, b), vjp)


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` by integer ``ids`` (any shape)."""
    ids = np.asarray(ids)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise DomainError(f"token id out of range [0, {vocab})")
    shape = table.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, ids, g)
        return (full,)

    return _result(table.data[ids], (table,), vjp)


def is_finite(t: Tensor) -> bool:
    return bool(np.all(np.isfinite(t.data)))


def numel(dims: Sequence[int]) -> int:
    return math.prod(dims)
