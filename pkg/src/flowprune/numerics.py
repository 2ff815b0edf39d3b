"""Dense float64 tensors with reverse-mode autodiff and a symmetric eigensolver.

Everything the backbone and the zero-shot proxies need, nothing more:
matmul, elementwise arithmetic, layer norm, tanh-GELU, softmax,
reshape/transpose, reductions, embedding lookup. Tensors are immutable
values; ops are pure functions that record parent links on their outputs,
so independent graphs can be evaluated from multiple threads. Any NaN/Inf
produced in a forward or backward computation raises NumericError naming
the offending op -- silent NaNs would corrupt every ranking downstream.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import NumericError, PreconditionError

Array = np.ndarray


def _as_array(values) -> Array:
    # note: ascontiguousarray would promote 0-d scalars to shape (1,)
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim > 0 and not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    return arr


def _check_finite(data: Array, op: str, phase: str = "forward") -> None:
    # fast path: a finite sum guarantees every element is finite; a non-finite
    # sum can also be overflow of finite values, so confirm before raising
    if not np.isfinite(data.sum()):
        if not np.all(np.isfinite(data)):
            raise NumericError(f"non-finite values produced by op '{op}' ({phase})")


class Tensor:
    """Immutable dense tensor. `data` is a read-only, C-contiguous float64 array."""

    __slots__ = ("data", "op", "parents", "vjp", "requires_grad", "trainable")

    def __init__(
        self,
        data,
        op: str = "leaf",
        parents: tuple["Tensor", ...] = (),
        vjp: Callable[[Array], tuple] | None = None,
        requires_grad: bool = False,
        trainable: bool = False,
    ):
        arr = _as_array(data)
        _check_finite(arr, op)
        arr.flags.writeable = False
        self.data = arr
        self.op = op
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.trainable = trainable

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    # Operator sugar; the named functions below are the actual implementation.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(values) -> Tensor:
    """Wrap values as a constant (non-differentiable) tensor."""
    if isinstance(values, Tensor):
        return values
    return Tensor(values)


def parameter(values) -> Tensor:
    """Wrap values as a trainable leaf tensor."""
    return Tensor(values, requires_grad=True, trainable=True)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Reduce `grad` back to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(
    data: Array,
    op: str,
    parents: tuple[Tensor, ...],
    vjp: Callable[[Array], tuple],
) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if needs:
        return Tensor(data, op=op, parents=parents, vjp=vjp, requires_grad=True)
    return Tensor(data, op=op)


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    out = a.data + b.data

    def vjp(g: Array):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, "add", (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    out = a.data - b.data

    def vjp(g: Array):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, "sub", (a, b), vjp)


def neg(a) -> Tensor:
    a = tensor(a)

    def vjp(g: Array):
        return (-g,)

    return _make(-a.data, "neg", (a,), vjp)


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    out = a.data * b.data

    def vjp(g: Array):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, "mul", (a, b), vjp)


def scale(a, c: float) -> Tensor:
    """Multiply by a python scalar (no graph node for the scalar)."""
    a = tensor(a)
    c = float(c)

    def vjp(g: Array):
        return (g * c,)

    return _make(a.data * c, "scale", (a,), vjp)


def matmul(a, b) -> Tensor:
    """Matrix product. Supports 2-D x 2-D, N-D x 2-D and stacked N-D x N-D
    with identical batch dimensions."""
    a, b = tensor(a), tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise PreconditionError("matmul expects tensors with ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise PreconditionError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}"
        )
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise PreconditionError(
            f"matmul batch dimensions disagree: {a.shape} x {b.shape}"
        )
    out = a.data @ b.data

    def vjp(g: Array):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(out, "matmul", (a, b), vjp)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = tensor(a)
    shape = tuple(int(s) for s in shape)
    out = a.data.reshape(shape)

    def vjp(g: Array):
        return (g.reshape(a.shape),)

    return _make(out, "reshape", (a,), vjp)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = tensor(a)
    axes = tuple(int(x) for x in axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))

    def vjp(g: Array):
        return (g.transpose(inv),)

    return _make(out, "transpose", (a,), vjp)


def _reduce_vjp_shape(a: Tensor, axis, keepdims: bool) -> tuple[tuple, float]:
    if axis is None:
        count = a.data.size
        expand_shape = (1,) * a.ndim
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        ax = tuple(x % a.ndim for x in ax)
        count = int(np.prod([a.shape[x] for x in ax]))
        expand_shape = tuple(1 if i in ax else n for i, n in enumerate(a.shape))
    return expand_shape, float(count)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    expand_shape, _ = _reduce_vjp_shape(a, axis, keepdims)

    def vjp(g: Array):
        g = np.asarray(g)
        if not keepdims:
            g = g.reshape(expand_shape)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, "sum", (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    expand_shape, count = _reduce_vjp_shape(a, axis, keepdims)

    def vjp(g: Array):
        g = np.asarray(g)
        if not keepdims:
            g = g.reshape(expand_shape)
        return (np.broadcast_to(g, a.shape) / count,)

    return _make(out, "mean", (a,), vjp)


_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def gelu(a) -> Tensor:
    """GELU with the tanh approximation."""
    a = tensor(a)
    x = a.data
    x2 = x * x
    th = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
    out = 0.5 * x * (1.0 + th)

    def vjp(g: Array):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        local = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
        return (g * local,)

    return _make(out, "gelu", (a,), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    a = tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g: Array):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _make(out, "softmax", (a,), vjp)


def layer_norm(a, gain, bias, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then apply learned gain and bias."""
    a, gain, bias = tensor(a), tensor(gain), tensor(bias)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g: Array):
        gy = g * gain.data
        m1 = gy.mean(axis=-1, keepdims=True)
        m2 = (gy * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gy - m1 - xhat * m2)
        ggain = _unbroadcast(g * xhat, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        return gx, ggain, gbias

    return _make(out, "layer_norm", (a, gain, bias), vjp)


def take_rows(table, indices) -> Tensor:
    """Row lookup `table[indices]` (embedding gather)."""
    table = tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if table.ndim != 2:
        raise PreconditionError("take_rows expects a 2-D table")
    if idx.min(initial=0) < 0 or (idx.size and idx.max() >= table.shape[0]):
        raise PreconditionError(
            f"take_rows index out of range for table with {table.shape[0]} rows"
        )
    out = table.data[idx]

    def vjp(g: Array):
        gt = np.zeros(table.shape, dtype=np.float64)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make(out, "take_rows", (table,), vjp)


# ---------------------------------------------------------------------------
# reverse-mode backward


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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(loss: Tensor, wrt: Iterable[Tensor]) -> list[Array]:
    """Reverse-mode gradients of a scalar loss w.r.t. the given tensors.

    Pure graph traversal; can be called repeatedly on the same graph.
    Tensors unreachable from the loss get zero gradients.
    """
    if loss.shape != ():
        raise PreconditionError(f"loss must be scalar, got shape {loss.shape}")
    wrt = list(wrt)
    wrt_ids = {id(t) for t in wrt}
    grads: dict[int, Array] = {id(loss): np.ones((), dtype=np.float64)}
    if loss.requires_grad:
        for node in reversed(_topo_order(loss)):
            if id(node) in wrt_ids:
                g = grads.get(id(node))
            else:
                g = grads.pop(id(node), None)
            if g is None or node.vjp is None:
                continue
            parent_grads = node.vjp(g)
            for p, pg in zip(node.parents, parent_grads):
                if not p.requires_grad or pg is None:
                    continue
                _check_finite(pg, node.op, phase="backward")
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg
    out = []
    for t in wrt:
        g = grads.get(id(t))
        out.append(np.zeros(t.shape, dtype=np.float64) if g is None else g)
    return out


class GradientTape:
    """Parameter registry plus a single-use reverse pass.

    Recording happens implicitly through the parent links the ops leave on
    their outputs; the tape's job is to map parameter names to leaf tensors
    and to enforce one backward pass per tape. Use independent tapes for
    independent gradient computations (they are safe to run in parallel).
    """

    def __init__(self, params: Mapping[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        self._consumed = False
        if params:
            for name, t in params.items():
                self.register(name, t)

    def register(self, name: str, t: Tensor) -> Tensor:
        if name in self._params:
            raise PreconditionError(f"parameter {name!r} registered twice")
        if not t.trainable:
            raise PreconditionError(f"parameter {name!r} is not a trainable leaf")
        self._params[name] = t
        return t

    def parameter(self, name: str, values) -> Tensor:
        return self.register(name, parameter(values))

    @property
    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def gradients(self, loss: Tensor) -> dict[str, Tensor]:
        if self._consumed:
            raise PreconditionError("tape already consumed by a backward pass")
        self._consumed = True
        names = list(self._params)
        gs = grad(loss, [self._params[n] for n in names])
        return {n: Tensor(g) for n, g in zip(names, gs)}


def backward(tape: GradientTape, loss: Tensor) -> dict[str, Tensor]:
    """Gradient of a scalar loss for every parameter registered on the tape."""
    return tape.gradients(loss)


# ---------------------------------------------------------------------------
# symmetric eigendecomposition


def sym_eig(m, tol: float = 1e-10) -> tuple[Array, Tensor]:
    """Eigenvalues (descending) and eigenvectors of a symmetric matrix.

    The input must be symmetric within `tol`; it is symmetrized as
    (m + m^T)/2 before decomposition. Column i of the returned eigenvector
    matrix pairs with eigenvalue i.
    """
    m = tensor(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise PreconditionError(f"sym_eig expects a square matrix, got {m.shape}")
    a = m.data
    asym = np.abs(a - a.T).max(initial=0.0)
    scale_ref = max(np.abs(a).max(initial=0.0), 1.0)
    if asym > tol * scale_ref:
        raise PreconditionError(
            f"matrix is not symmetric within {tol} (max asymmetry {asym:.3e})"
        )
    sym = (a + a.T) / 2.0
    try:
        w, v = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericError(f"eigendecomposition failed to converge: {exc}") from exc
    order = np.argsort(w)[::-1]
    return w[order], Tensor(np.ascontiguousarray(v[:, order]))
