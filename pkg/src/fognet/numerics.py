"""Small dense-array engine with reverse-mode differentiation.

Every :class:`Tensor` produced by a differentiable operation records its
parents and a closure that maps the output gradient to parent gradients.
Calling :meth:`Tensor.backward` on a scalar walks that record (the tape) in
reverse topological order. The record is rebuilt on every forward pass.

Operations act on the last one or two axes ("rows" are the second to last
axis, "columns" the last); any leading axes are treated as a batch. Compute
precision is float64 throughout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateInputError, DimensionError, EvaluationError

NORM_FLOOR = 1e-12
FVT_MAGIC = b"FVT1"


class Tensor:
    """A float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = ""):
        arr = np.array(data, dtype=np.float64)
        if not requires_grad and not _parents:
            arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every tracked leaf."""
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() without grad needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self.grad = np.array(grad, dtype=np.float64)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g.copy() if parent.grad is None else parent.grad + g


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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    tracked = any(p.requires_grad for p in parents)
    if not tracked:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


# -- elementwise ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return _result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(out, (a, b), backward, "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


# -- reductions -------------------------------------------------------------


def sum(a) -> Tensor:  # noqa: A001 - mirrors the numpy name
    a = as_tensor(a)
    return _result(np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return _result(np.mean(a.data), (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),), "mean")


def mean_rows(a) -> Tensor:
    """Average over the row axis: ``[..., T, d] -> [..., d]``."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise DimensionError(f"mean_rows needs at least 2 axes, got shape {a.shape}")
    n = a.shape[-2]

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, -2) / n, a.shape).copy(),)

    return _result(a.data.mean(axis=-2), (a,), backward, "mean_rows")


def argmax_rows(a) -> np.ndarray:
    """Index of the row maximum; ties resolve to the lowest index. Not differentiable."""
    data = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
    return np.argmax(data, axis=-1)


# -- matrix ops -------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, _swap(b.data)) if a.requires_grad else None
        gb = np.matmul(_swap(a.data), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _result(out, (a, b), backward, "matmul")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.reshape(shape).copy(), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise DimensionError(f"transpose needs at least 2 axes, got shape {a.shape}")
    return _result(_swap(a.data).copy(), (a,), lambda g: (_swap(g).copy(),), "transpose")


def softmax_rows(x) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), backward, "softmax_rows")


def log_softmax_rows(x) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _result(out, (x,), backward, "log_softmax_rows")


def concat_rows(a, b) -> Tensor:
    """Stack ``[..., T, d]`` and ``[..., T', d]`` into ``[..., T+T', d]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"concat_rows shape mismatch: {a.shape} and {b.shape}")
    n = a.shape[-2]
    out = np.concatenate([a.data, b.data], axis=-2)
    return _result(out, (a, b), lambda g: (g[..., :n, :].copy(), g[..., n:, :].copy()), "concat_rows")


def _row_slice(x: Tensor, start: int, stop: int) -> Tensor:
    def backward(g):
        full = np.zeros_like(x.data)
        full[..., start:stop, :] = g
        return (full,)

    return _result(x.data[..., start:stop, :].copy(), (x,), backward, "row_slice")


def chunk2(x) -> tuple[Tensor, Tensor]:
    """Split ``[..., 2T, d]`` into two ``[..., T, d]`` halves."""
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-2] % 2:
        raise DimensionError(f"chunk2 needs an even row count, got shape {x.shape}")
    half = x.shape[-2] // 2
    return _row_slice(x, 0, half), _row_slice(x, half, 2 * half)


def cols(x, start: int, stop: int) -> Tensor:
    """Slice ``[..., start:stop]`` along the last axis."""
    x = as_tensor(x)

    def backward(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return (full,)

    return _result(x.data[..., start:stop].copy(), (x,), backward, "cols")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    widths = np.cumsum([0] + [p.shape[-1] for p in parts])
    out = np.concatenate([p.data for p in parts], axis=-1)

    def backward(g):
        return tuple(g[..., widths[i] : widths[i + 1]].copy() for i in range(len(parts)))

    return _result(out, tuple(parts), backward, "concat_cols")


def l2_normalize_rows(x, norm_floor: float = NORM_FLOOR) -> Tensor:
    x = as_tensor(x)
    norms = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if np.any(norms <= norm_floor):
        raise DegenerateInputError(f"row norm below {norm_floor} in tensor of shape {x.shape}")
    out = x.data / norms

    def backward(g):
        return ((g - out * (g * out).sum(axis=-1, keepdims=True)) / norms,)

    return _result(out, (x,), backward, "l2_normalize_rows")


def cosine_sim_matrix(a, b) -> Tensor:
    """Pairwise cosine similarity of the rows of ``a`` and ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"cosine_sim_matrix feature mismatch: {a.shape} vs {b.shape}")
    return matmul(l2_normalize_rows(a), transpose(l2_normalize_rows(b)))


# -- finite-difference oracle -------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_errors: list[float]
    tol: float
    h: float
    names: list[str] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.max_rel_errors, default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def _scalar(value) -> float:
    v = float(np.asarray(value.data if isinstance(value, Tensor) else value).reshape(-1)[0])
    if not np.isfinite(v):
        raise EvaluationError(f"function value is not finite: {v}")
    return v


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    names: Sequence[str] | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f()`` against central differences.

    ``f`` takes no arguments and must read ``params`` by reference; entries are
    perturbed in place and restored afterwards.
    """
    for p in params:
        p.grad = None
    out = f()
    _scalar(out)
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    errors = []
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f())
            flat[i] = orig - h
            fm = _scalar(f())
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * h)
        errors.append(float(relative_error(ga.reshape(-1), numeric).max(initial=0.0)))
    for p in params:
        p.grad = None
    return GradCheckReport(errors, tol, h, list(names) if names else [f"param{i}" for i in range(len(params))])


# -- FVT1 binary tensor files --------------------------------------------------


def write_fvt(path, array) -> None:
    """Write ``array`` as an FVT1 file (32-bit little-endian storage)."""
    arr = np.asarray(array.data if isinstance(array, Tensor) else array)
    header = FVT_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_fvt(path) -> np.ndarray:
    """Read an FVT1 file into a float64 array."""
    raw = Path(path).read_bytes()
    if raw[:4] != FVT_MAGIC:
        raise ValueError(f"{path}: not an FVT1 file")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    shape = struct.unpack_from(f"<{ndim}I", raw, 8)
    offset = 8 + 4 * ndim
    count = int(np.prod(shape, dtype=np.int64))
    if len(raw) - offset != 4 * count:
        raise ValueError(f"{path}: payload size does not match shape {shape}")
    return np.frombuffer(raw, dtype="<f4", offset=offset, count=count).astype(np.float64).reshape(shape)
