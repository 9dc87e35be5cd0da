"""Reverse-mode automatic differentiation over float64 numpy arrays.

Small tape engine in the micrograd style: every op builds a fresh Tensor
holding the forward value plus a closure that routes the adjoint to its
parents.  backward() topologically sorts the graph from a scalar root and
runs the closures once.  Gradients accumulate into leaf .grad buffers, so
call zero_grad between training steps.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import AutodiffError, ShapeError


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward", "_done")

    def __init__(
        self,
        data,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward
        self._done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        # g may alias another node's grad buffer; copy on first touch
        if self.grad is None:
            self.grad = np.array(g)
        else:
            self.grad += g

    def _accumulate_owned(self, g: np.ndarray) -> None:
        # for freshly allocated adjoints only: takes ownership, no copy
        if self.grad is None:
            self.grad = g
        else:
            self.grad += g

    def backward(self) -> None:
        if self.data.ndim != 0:
            raise AutodiffError(
                f"backward requires a scalar root, got shape {self.data.shape}"
            )
        if self._done:
            raise AutodiffError("backward already ran for this root")
        self._done = True

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
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                if node.grad is not None:
                    node._backward(node.grad)
                # interior node: its adjoint is spent and its closure holds
                # the only references keeping this subgraph alive; drop both
                # so buffers free by refcount instead of waiting on gc
                node.grad = None
                node._backward = None
                node._parents = ()

    # operator sugar; python scalars lift to constant leaves
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


def tensor(data) -> Tensor:
    """Leaf tensor (trainable parameter or constant input)."""
    return Tensor(data)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum the adjoint over axes that numpy broadcasting introduced."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not broadcast")


def _route(t: Tensor, g: np.ndarray) -> None:
    """Reduce a broadcasted adjoint and hand it to t (owned when fresh)."""
    if g.shape == t.data.shape:
        t._accumulate(g)
    else:
        t._accumulate_owned(_unbroadcast(g, t.data.shape))


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    out = Tensor(a.data + b.data, (a, b))

    def bwd(g):
        _route(a, g)
        _route(b, g)

    out._backward = bwd
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    out = Tensor(a.data - b.data, (a, b))

    def bwd(g):
        _route(a, g)
        b._accumulate_owned(_unbroadcast(-g, b.data.shape))

    out._backward = bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    out = Tensor(a.data * b.data, (a, b))

    def bwd(g):
        a._accumulate_owned(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate_owned(_unbroadcast(g * a.data, b.data.shape))

    out._backward = bwd
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")
    out = Tensor(a.data / b.data, (a, b))

    def bwd(g):
        a._accumulate_owned(_unbroadcast(g / b.data, a.data.shape))
        b._accumulate_owned(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    out._backward = bwd
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, (a,))
    out._backward = lambda g: a._accumulate_owned(-g)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data, (a, b))

    def bwd(g):
        a._accumulate_owned(g @ b.data.T)
        b._accumulate_owned(a.data.T @ g)

    out._backward = bwd
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat of zero tensors")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), tuple(parts))
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            p._accumulate(g[tuple(sl)])

    out._backward = bwd
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape), (a,))
    out._backward = lambda g: a._accumulate(g.reshape(a.data.shape))
    return out


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup a[idx]; duplicate indices accumulate in the backward pass."""
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-D tensor, got {a.data.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(a.data[idx], (a,))

    def bwd(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        kernels.scatter_add_rows(a.grad, idx, np.ascontiguousarray(g))

    out._backward = bwd
    return out


def gather_pair_add(a: Tensor, b: Tensor, c: Tensor, ia: np.ndarray, ib: np.ndarray) -> Tensor:
    """Fused a[ia] + b[ib] + c, avoiding the two intermediate gather tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2 or c.data.ndim != 2:
        raise ShapeError("gather_pair_add expects 2-D tensors")
    ia = np.asarray(ia, dtype=np.int64)
    ib = np.asarray(ib, dtype=np.int64)
    if ia.shape != ib.shape or c.data.shape != (ia.shape[0], a.data.shape[1]):
        raise ShapeError("gather_pair_add index/operand shapes disagree")
    out = Tensor(kernels.gather2_add(a.data, b.data, c.data, ia, ib), (a, b, c))

    def bwd(g):
        gc = np.ascontiguousarray(g)
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        if b.grad is None:
            b.grad = np.zeros_like(b.data)
        kernels.scatter2_add_rows(a.grad, b.grad, ia, ib, gc)
        c._accumulate(gc)

    out._backward = bwd
    return out


def attention_aggregate(
    alpha: Tensor, values: Tensor, src: np.ndarray, dst: np.ndarray, num_segments: int
) -> Tensor:
    """Fused out[dst[e]] += alpha[e] * values[src[e]] over all rows e.

    Equivalent to segment_sum(mul(alpha, gather_rows(values, src)), dst, n)
    but without materializing any (rows, d) intermediates.
    """
    if alpha.data.ndim != 2 or alpha.data.shape[1] != 1:
        raise ShapeError(f"attention weights must be (rows, 1), got {alpha.data.shape}")
    if values.data.ndim != 2:
        raise ShapeError(f"values must be 2-D, got {values.data.shape}")
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if src.shape != dst.shape or src.shape[0] != alpha.data.shape[0]:
        raise ShapeError("attention_aggregate index shapes disagree")
    buf = np.zeros((num_segments, values.data.shape[1]))
    kernels.weighted_gather_scatter(buf, alpha.data, values.data, src, dst)
    out = Tensor(buf, (alpha, values))

    def bwd(g):
        galpha = np.empty_like(alpha.data)
        if values.grad is None:
            values.grad = np.zeros_like(values.data)
        kernels.weighted_gather_scatter_bwd(
            galpha, values.grad, alpha.data, values.data, src, dst, np.ascontiguousarray(g)
        )
        alpha._accumulate_owned(galpha)

    out._backward = bwd
    return out


def segment_sum(a: Tensor, seg: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of a into num_segments buckets given by seg."""
    if a.data.ndim != 2:
        raise ShapeError(f"segment_sum expects a 2-D tensor, got {a.data.shape}")
    seg = np.asarray(seg, dtype=np.int64)
    if seg.shape[0] != a.data.shape[0]:
        raise ShapeError("segment ids must match the number of rows")
    buf = np.zeros((num_segments, a.data.shape[1]))
    kernels.scatter_add_rows(buf, seg, np.ascontiguousarray(a.data))
    out = Tensor(buf, (a,))

    def bwd(g):
        if a.grad is None:
            a.grad = np.ascontiguousarray(g)[seg]
        else:
            kernels.gather_rows_add(a.grad, seg, np.ascontiguousarray(g))

    out._backward = bwd
    return out


def segment_mean(a: Tensor, seg: np.ndarray, num_segments: int) -> Tensor:
    seg = np.asarray(seg, dtype=np.int64)
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    counts = np.maximum(counts, 1.0)
    s = segment_sum(a, seg, num_segments)
    return mul(s, Tensor(1.0 / counts[:, None]))


def mean_rows(a: Tensor) -> Tensor:
    """Mean over axis 0 of an (n, d) tensor, returning a d-vector."""
    if a.data.ndim != 2:
        raise ShapeError(f"mean_rows expects a 2-D tensor, got {a.data.shape}")
    n = a.data.shape[0]
    out = Tensor(a.data.mean(axis=0), (a,))
    out._backward = lambda g: a._accumulate_owned(np.broadcast_to(g / n, a.data.shape).copy())
    return out


def broadcast_rows(a: Tensor, n: int) -> Tensor:
    """Tile a (1, d) row to (n, d)."""
    if a.data.ndim != 2 or a.data.shape[0] != 1:
        raise ShapeError(f"broadcast_rows expects shape (1, d), got {a.data.shape}")
    out = Tensor(np.broadcast_to(a.data, (n, a.data.shape[1])).copy(), (a,))
    out._backward = lambda g: a._accumulate_owned(g.sum(axis=0, keepdims=True))
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), (a,))
    out._backward = lambda g: a._accumulate_owned(np.full_like(a.data, float(g)))
    return out


def mean_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.mean(), (a,))
    out._backward = lambda g: a._accumulate_owned(np.full_like(a.data, float(g) / a.data.size))
    return out


def sum_rows(a: Tensor) -> Tensor:
    """Sum over axis 1 of an (n, d) tensor, keeping (n, 1)."""
    if a.data.ndim != 2:
        raise ShapeError(f"sum_rows expects a 2-D tensor, got {a.data.shape}")
    out = Tensor(a.data.sum(axis=1, keepdims=True), (a,))
    out._backward = lambda g: a._accumulate_owned(np.broadcast_to(g, a.data.shape).copy())
    return out


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data), (a,))
    out._backward = lambda g: a._accumulate_owned(g * out.data)
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), (a,))
    out._backward = lambda g: a._accumulate_owned(g / a.data)
    return out


def sqrt(a: Tensor) -> Tensor:
    out = Tensor(np.sqrt(a.data), (a,))
    out._backward = lambda g: a._accumulate_owned(g * 0.5 / out.data)
    return out


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data, (a,))
    out._backward = lambda g: a._accumulate_owned(g * 2.0 * a.data)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), (a,))
    out._backward = lambda g: a._accumulate_owned(g * (a.data > 0))
    return out


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    out = Tensor(kernels.leaky_forward(a.data, slope), (a,))
    out._backward = lambda g: a._accumulate_owned(kernels.leaky_backward(a.data, g, slope))
    return out


def elu(a: Tensor) -> Tensor:
    neg_part = np.expm1(np.minimum(a.data, 0.0))
    pos = a.data > 0
    der = np.where(pos, 1.0, neg_part + 1.0)
    out = Tensor(np.where(pos, a.data, neg_part), (a,))
    out._backward = lambda g: a._accumulate_owned(g * der)
    return out


def softplus(a: Tensor) -> Tensor:
    out = Tensor(np.logaddexp(0.0, a.data), (a,))
    out._backward = lambda g: a._accumulate_owned(g * _sigmoid(a.data))
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    s = ex / ex.sum(axis=axis, keepdims=True)
    out = Tensor(s, (a,))

    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        a._accumulate_owned(s * (g - dot))

    out._backward = bwd
    return out


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


class Adam:
    """Adam with bias correction; operates in place on leaf tensors."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / b1t
            v_hat = self.v[i] / b2t
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        zero_grads(self.params)
