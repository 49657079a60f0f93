"""Dense tensors with define-by-run reverse-mode differentiation.

Every op records its parents and a backward closure on the output tensor;
``Tensor.backward`` walks the recorded graph once in reverse topological
order.  The tape is rebuilt on every forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteError(FloatingPointError):
    """A forward result contained NaN or Inf."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

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

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = topological_order(self)
        # intermediates restart from zero so repeated backward calls on fresh graphs stay clean
        for node in order:
            if node._backward is not None:
                node.grad = None
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _lift(other, self))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def topological_order(root: Tensor) -> list[Tensor]:
    """Parents-before-children order of every node reachable from ``root``."""
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _result(data: np.ndarray, op: str, parents: Sequence[Tensor], backward) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op}: non-finite values in forward result")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _broadcast_ok(big: tuple[int, ...], small: tuple[int, ...]) -> bool:
    # only leading-axis broadcasting: small must match the trailing axes of big
    return len(small) <= len(big) and big[len(big) - len(small):] == small


def _sum_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    if _broadcast_ok(a.shape, b.shape) or _broadcast_ok(b.shape, a.shape):
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("add", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_sum_to(g, a.shape))
        if b.requires_grad:
            b._accumulate(_sum_to(g, b.shape))

    return _result(a.data + b.data, "add", (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("mul", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_sum_to(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_sum_to(g * a.data, b.shape))

    return _result(a.data * b.data, "mul", (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _result(a.data @ b.data, "matmul", (a, b), backward)


def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        x._accumulate(g * s * (1.0 - s))

    return _result(s, "sigmoid", (x,), backward)


def relu(x: Tensor) -> Tensor:
    on = x.data > 0

    def backward(g):
        x._accumulate(g * on)

    return _result(np.where(on, x.data, 0.0).astype(x.dtype, copy=False), "relu", (x,), backward)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - t * t))

    return _result(t, "tanh", (x,), backward)


_UNARY = {"sigmoid": sigmoid, "relu": relu, "tanh": tanh}
_BINARY = {"add": add, "mul": mul}


def elementwise(op: str, *args: Tensor) -> Tensor:
    """Dispatch one of add, mul, sigmoid, relu, tanh by name."""
    if op in _UNARY:
        (x,) = args
        return _UNARY[op](x)
    if op in _BINARY:
        a, b = args
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise DimensionError("concat: no inputs")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat: shape {t.shape} does not match {ref} off axis {axis}")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, splits, axis=ax)):
            if t.requires_grad:
                t._accumulate(part)

    return _result(np.concatenate([t.data for t in tensors], axis=ax), "concat", tuple(tensors), backward)


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows ``x[index]``; backward scatter-adds into repeated rows."""
    index = np.asarray(index, dtype=np.intp)

    def backward(g):
        acc = np.zeros_like(x.data)
        np.add.at(acc, index, g)
        x._accumulate(acc)

    return _result(x.data[index], "take_rows", (x,), backward)


def scatter_rows(x: Tensor, index: np.ndarray, n_rows: int) -> Tensor:
    """Sum rows of ``x`` into an ``n_rows``-row zero tensor at ``index``."""
    index = np.asarray(index, dtype=np.intp)
    if x.shape[0] != index.shape[0]:
        raise DimensionError(f"scatter_rows: {x.shape[0]} rows but {index.shape[0]} indices")
    out = np.zeros((n_rows,) + x.shape[1:], dtype=x.dtype)
    np.add.at(out, index, x.data)

    def backward(g):
        x._accumulate(g[index])

    return _result(out, "scatter_rows", (x,), backward)


def total(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(np.broadcast_to(g, x.shape))

    return _result(np.asarray(x.data.sum()), "sum", (x,), backward)


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood over the rows where ``mask`` is true."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy: logits must be 2-D, got {logits.shape}")
    n, v = logits.shape
    targets = np.asarray(targets)
    mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if targets.shape != (n,) or mask.shape != (n,):
        raise DimensionError(f"cross_entropy: logits {logits.shape}, targets {targets.shape}, mask {mask.shape}")
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise ValueError("cross_entropy: mask selects no positions")
    tgt = targets[rows].astype(np.intp)
    if tgt.min() < 0 or tgt.max() >= v:
        raise ValueError(f"cross_entropy: target ids must lie in [0, {v})")
    z = logits.data[rows]
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = np.mean(lse - z[np.arange(rows.size), tgt])

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(rows.size), tgt] -= 1.0
        full = np.zeros_like(logits.data)
        full[rows] = p * (g / rows.size)
        logits._accumulate(full)

    return _result(np.asarray(loss, dtype=logits.dtype), "cross_entropy", (logits,), backward)


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tol: float
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        out = []
        for name, err in self.max_rel_error.items():
            status = "FAIL" if name in self.failures else "ok"
            out.append(f"{status:4s} {name:48s} max_rel_err={err:.3e}")
        return out


def relative_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Iterable[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients of the scalar ``f()`` against central differences.

    ``f`` must rebuild its graph from the current parameter values on every
    call; parameters are perturbed in place and restored.
    """
    if not isinstance(params, Mapping):
        params = {str(i): p for i, p in enumerate(params)}
    for p in params.values():
        p.zero_grad()
    out = f()
    if not np.isfinite(out.data).all():
        raise NonFiniteError("grad_check: objective is non-finite")
    out.backward()
    analytic = {name: p.grad.copy() for name, p in params.items()}

    def value() -> float:
        v = float(f().data)
        if not np.isfinite(v):
            raise NonFiniteError("grad_check: objective is non-finite")
        return v

    errors: dict[str, float] = {}
    failures: list[str] = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        numeric = np.empty(flat.size)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = value()
            flat[k] = orig - eps
            down = value()
            flat[k] = orig
            numeric[k] = (up - down) / (2 * eps)
        err = float(relative_error(analytic[name].reshape(-1), numeric).max()) if flat.size else 0.0
        errors[name] = err
        if err >= tol:
            failures.append(name)
    return GradCheckReport(errors, tol, failures)
