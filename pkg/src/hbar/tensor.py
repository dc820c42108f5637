"""Dense real tensors with a small reverse-mode autodiff engine.

Every operation returns a new :class:`Tensor` holding a reference to its
parents and a closure that maps the output gradient to parent gradients.
:func:`backward` (or :meth:`Tensor.backward`) orders the graph topologically
and walks it once in reverse.  Broadcasting is limited to scalars, plus the
explicit row-vector add used for biases.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf showed up where a finite value was required."""


Number = float | int


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: tuple["Tensor", ...] = (), _backward: Callable | None = None,
                 op: str = "leaf"):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(s <= 0 for s in arr.shape):
            raise ShapeError(f"dimension sizes must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"{what} contains non-finite values")
        return self

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(self, other)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(self, other)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn: Callable, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, dtype=data.dtype,
                 _parents=parents if needs else (), _backward=grad_fn if needs else None, op=op)
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are incompatible")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    # scalar operand: collapse everything
    return np.asarray(g.sum()).reshape(shape)


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    return a, b


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _same_shape(a, b, "add")
    out = a.data + b.data
    sa, sb = a.shape, b.shape

    def grad_fn(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)
    return _node(out, (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _same_shape(a, b, "sub")
    out = a.data - b.data
    sa, sb = a.shape, b.shape

    def grad_fn(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)
    return _node(out, (a, b), grad_fn, "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    out = ad * bd

    def grad_fn(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)
    return _node(out, (a, b), grad_fn, "mul")


def scale(a: Tensor, c: Number) -> Tensor:
    c = a.data.dtype.type(c)
    out = a.data * c
    return _node(out, (a,), lambda g: (g * c,), "scale")


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # relu'(0) = 0
    out = np.where(mask, a.data, a.data.dtype.type(0))
    return _node(out, (a,), lambda g: (g * mask,), "relu")


def absolute(a: Tensor) -> Tensor:
    s = np.sign(a.data)
    return _node(np.abs(a.data), (a,), lambda g: (g * s,), "abs")


def elementwise(op: str, *args, **kwargs) -> Tensor:
    """Dispatch by name: ``elementwise("relu", x)``, ``elementwise("scale", x, 2.0)``."""
    table = {"add": add, "sub": sub, "mul": mul, "exp": exp, "relu": relu,
             "neg": neg, "scale": scale, "abs": absolute}
    try:
        fn = table[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args, **kwargs)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        return g @ bd.T, ad.T @ g
    return _node(ad @ bd, (a, b), grad_fn, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got {a.shape}")
    return _node(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """``a + v`` with ``v`` of shape (n,) added to every row of ``a`` (m, n)."""
    if a.data.ndim != 2 or v.data.ndim != 1 or v.shape[0] != a.shape[1]:
        raise ShapeError(f"add_rowvec: {a.shape} and {v.shape}")
    return _node(a.data + v.data, (a, v), lambda g: (g, g.sum(axis=0)), "add_rowvec")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    out = a.data.reshape(tuple(shape))
    return _node(out, (a,), lambda g: (g.reshape(src),), "reshape")


def flatten_rows(a: Tensor) -> Tensor:
    """(m, ...) -> (m, prod(...))."""
    if a.data.ndim == 2:
        return a
    return reshape(a, (a.shape[0], -1))


# ---------------------------------------------------------------- reductions

def _maybe_assert(out: np.ndarray, check_finite: bool, op: str) -> None:
    if check_finite and not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced a non-finite value")


def sum_all(a: Tensor, check_finite: bool = False) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.dtype).reshape(1)
    _maybe_assert(out, check_finite, "sum")
    shape = a.shape
    return _node(out, (a,), lambda g: (np.full(shape, g[0], dtype=g.dtype),), "sum")


def mean_all(a: Tensor, check_finite: bool = False) -> Tensor:
    return scale(sum_all(a, check_finite), 1.0 / a.data.size)


def sum_rows(a: Tensor) -> Tensor:
    """Sum each row of a matrix: (m, n) -> (m,)."""
    n = a.shape[1]
    return _node(a.data.sum(axis=1), (a,), lambda g: (np.repeat(g[:, None], n, axis=1),), "sum_rows")


def rowmax(a: Tensor) -> Tensor:
    """Row maxima (m, n) -> (m,); the gradient goes to the first maximising column."""
    idx = np.argmax(a.data, axis=1)
    rows = np.arange(a.shape[0])
    shape = a.shape

    def grad_fn(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[rows, idx] = g
        return (out,)
    return _node(a.data[rows, idx], (a,), grad_fn, "rowmax")


def trace(a: Tensor) -> Tensor:
    if a.data.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"trace needs a square matrix, got {a.shape}")
    n = a.shape[0]
    out = np.asarray(np.trace(a.data), dtype=a.dtype).reshape(1)
    return _node(out, (a,), lambda g: (np.eye(n, dtype=g.dtype) * g[0],), "trace")


# ---------------------------------------------------------------- softmax family

def log_softmax_rows(logits: Tensor) -> Tensor:
    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def grad_fn(g):
        return (g - p * g.sum(axis=1, keepdims=True),)
    return _node(out, (logits,), grad_fn, "log_softmax")


def softmax_rows(logits: Tensor) -> Tensor:
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_rows needs a matrix, got {logits.shape}")
    z = logits.data
    e = np.exp(z - z.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)

    def grad_fn(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)
    return _node(p, (logits,), grad_fn, "softmax")


# ---------------------------------------------------------------- kernel helpers

def sq_dists(x: Tensor) -> Tensor:
    """Pairwise squared Euclidean distances between rows, exact zero diagonal."""
    if x.data.ndim != 2:
        raise ShapeError(f"sq_dists needs a matrix, got {x.shape}")
    xd = x.data
    sq = np.einsum("ij,ij->i", xd, xd)
    d = sq[:, None] + sq[None, :] - 2.0 * (xd @ xd.T)
    np.maximum(d, 0, out=d)
    np.fill_diagonal(d, 0)

    def grad_fn(g):
        gs = g + g.T
        return (2.0 * (gs.sum(axis=1)[:, None] * xd - gs @ xd),)
    return _node(d, (x,), grad_fn, "sq_dists")


def center(k: Tensor) -> Tensor:
    """``H K H`` with ``H = I - 11^T/m``, computed in O(m^2)."""
    if k.data.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ShapeError(f"center needs a square matrix, got {k.shape}")
    return _node(_double_center(k.data), (k,), lambda g: (_double_center(g),), "center")


def _double_center(a: np.ndarray) -> np.ndarray:
    return a - a.mean(axis=0, keepdims=True) - a.mean(axis=1, keepdims=True) + a.mean()


# ---------------------------------------------------------------- backward

class Tape:
    """Reverse-topological schedule of the graph feeding one output."""

    def __init__(self, output: Tensor):
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.nodes = order  # parents before children
        self.index = {id(n): i for i, n in enumerate(order)}

    def __len__(self) -> int:
        return len(self.nodes)

    def run(self, output: Tensor, seed: np.ndarray) -> dict[int, np.ndarray]:
        grads: dict[int, np.ndarray] = {id(output): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None) if node._backward is not None else grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return grads


def _scalar_seed(output: Tensor) -> np.ndarray:
    if output.data.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    return np.ones_like(output.data)


def backward(output: Tensor) -> None:
    """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every requires_grad leaf."""
    seed = _scalar_seed(output)
    if not output.requires_grad:
        return
    tape = Tape(output)
    grads = tape.run(output, seed)
    for node in tape.nodes:
        if node._backward is None and node.requires_grad:
            g = grads.get(id(node))
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g


def grad(output: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar w.r.t. ``wrt`` without touching any ``.grad`` buffer."""
    wrt = list(wrt)
    seed = _scalar_seed(output)
    if not output.requires_grad:
        return [np.zeros_like(t.data) for t in wrt]
    grads = Tape(output).run(output, seed)
    return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]
