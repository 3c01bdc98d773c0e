"""Dense 2-D reverse-mode autodiff with support for gradients of gradients.

Every value is a 2-D numpy array wrapped in a :class:`Tensor`.  Each
primitive op records its parents and a backward rule.  Backward rules are
written in terms of the same primitive ops, so when :func:`backward` runs in
higher-order mode the gradient computation itself is recorded and can be
differentiated again.  This is what makes the gradient penalty's parameter
gradients exact.

In first-order mode, backward runs with recording disabled and the returned
gradients are plain constants.

Broadcasting is limited to adding a ``1 x c`` bias row to an ``r x c``
matrix; everything else must match shapes exactly.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DimensionError

LEAKY_SLOPE = 0.2

_local = threading.local()


def _grad_enabled():
    return getattr(_local, "grad_enabled", True)


def _active_tape():
    return getattr(_local, "tape", None)


@contextmanager
def grad_mode(enabled):
    prev = _grad_enabled()
    _local.grad_enabled = enabled
    try:
        yield
    finally:
        _local.grad_enabled = prev


def no_grad():
    return grad_mode(False)


class Tape:
    """Ordered record of every node created while the tape is active.

    ``higher_order`` marks the tape as allowing differentiation through a
    gradient (needed by :func:`grad_wrt_input`).  :meth:`replay` recomputes
    every recorded node from its parents and checks the values are
    bit-for-bit identical.
    """

    def __init__(self, higher_order=False):
        self.higher_order = higher_order
        self.nodes = []
        self._prev = None

    def __enter__(self):
        self._prev = _active_tape()
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = self._prev
        return False

    def record(self, node):
        self.nodes.append(node)

    def replay(self):
        """Recompute all recorded nodes; return True when every value matches bitwise."""
        ok = True
        for node in self.nodes:
            if node._forward is None:
                continue
            fresh = node._forward(*(p.value for p in node.parents))
            if fresh.dtype != node.value.dtype or not np.array_equal(fresh, node.value):
                ok = False
        return ok


def _as_matrix(value, dtype=None):
    arr = np.asarray(value, dtype=dtype)
    if arr.dtype.kind not in "f":
        arr = arr.astype(np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected a matrix, got array with shape {arr.shape}")
    return arr


class Tensor:
    """A matrix value plus the bookkeeping needed for reverse-mode differentiation."""

    __slots__ = ("value", "parents", "op", "requires_grad", "_backward", "_forward", "name")

    def __init__(self, value, requires_grad=False, name=None, dtype=None):
        self.value = _as_matrix(value, dtype)
        self.parents = ()
        self.op = "leaf"
        self.requires_grad = requires_grad
        self._backward = None
        self._forward = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def rows(self):
        return self.value.shape[0]

    @property
    def cols(self):
        return self.value.shape[1]

    @property
    def dtype(self):
        return self.value.dtype

    def item(self):
        if self.value.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.value.shape}")
        return float(self.value[0, 0])

    def numpy(self):
        return self.value

    def detach(self):
        return Tensor(self.value, name=self.name)

    def __repr__(self):
        name = f" {self.name!r}" if self.name else ""
        return f"Tensor{name}(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, other)
        return add(self, other)

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, -other)
        return sub(self, other)

    def __rsub__(self, other):
        return shift(neg(self), other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def constant(value, dtype=None):
    return Tensor(value, dtype=dtype)


def parameter(value, name=None):
    return Tensor(value, requires_grad=True, name=name)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op, value, parents, backward, forward):
    out = Tensor.__new__(Tensor)
    out.value = value
    out.op = op
    out.name = None
    out.parents = parents
    out._forward = forward
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._backward = backward
    else:
        out.requires_grad = False
        out._backward = None
    tape = _active_tape()
    if tape is not None:
        tape.record(out)
    return out


def _check_same(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.shape == b.shape:
        return _make("add", a.value + b.value, (a, b),
                     lambda g, out: (g, g), lambda x, y: x + y)
    if b.rows == 1 and b.cols == a.cols:
        return _make("add_row", a.value + b.value, (a, b),
                     lambda g, out: (g, sum_rows(g)), lambda x, y: x + y)
    raise DimensionError(f"add: shape mismatch {a.shape} vs {b.shape}")


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_same("sub", a, b)
    return _make("sub", a.value - b.value, (a, b),
                 lambda g, out: (g, neg(g)), lambda x, y: x - y)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_same("mul", a, b)
    return _make("mul", a.value * b.value, (a, b),
                 lambda g, out: (mul(g, out.parents[1]), mul(g, out.parents[0])),
                 lambda x, y: x * y)


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_same("div", a, b)

    def bwd(g, out):
        x, y = out.parents
        return div(g, y), neg(div(mul(g, x), mul(y, y)))

    return _make("div", a.value / b.value, (a, b), bwd, lambda x, y: x / y)


def neg(a):
    return _make("neg", -a.value, (a,), lambda g, out: (neg(g),), lambda x: -x)


def scale(a, k):
    k = float(k)
    return _make("scale", a.value * k, (a,),
                 lambda g, out: (scale(g, k),), lambda x: x * k)


def shift(a, k):
    k = float(k)
    return _make("shift", a.value + k, (a,), lambda g, out: (g,), lambda x: x + k)


def square(a):
    return _make("square", a.value * a.value, (a,),
                 lambda g, out: (mul(g, scale(out.parents[0], 2.0)),),
                 lambda x: x * x)


def sqrt(a):
    return _make("sqrt", np.sqrt(a.value), (a,),
                 lambda g, out: (div(g, scale(out, 2.0)),), np.sqrt)


def sq_diff(a, b):
    return square(sub(a, b))


# ------------------------------------------------------------ linear algebra


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul: shape mismatch {a.shape} vs {b.shape}")

    def bwd(g, out):
        x, y = out.parents
        return matmul(g, transpose(y)), matmul(transpose(x), g)

    return _make("matmul", a.value @ b.value, (a, b), bwd, lambda x, y: x @ y)


def transpose(a):
    return _make("transpose", np.ascontiguousarray(a.value.T), (a,),
                 lambda g, out: (transpose(g),),
                 lambda x: np.ascontiguousarray(x.T))


# ------------------------------------------------------------ shape plumbing


def concat_cols(*parts):
    parts = tuple(_wrap(p) for p in parts)
    rows = parts[0].rows
    for p in parts[1:]:
        if p.rows != rows:
            raise DimensionError(
                f"concat: row mismatch {parts[0].shape} vs {p.shape}")
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def bwd(g, out):
        return tuple(slice_cols(g, int(bounds[i]), int(bounds[i + 1]))
                     for i in range(len(parts)))

    return _make("concat", np.concatenate([p.value for p in parts], axis=1), parts,
                 bwd, lambda *xs: np.concatenate(xs, axis=1))


def slice_cols(a, start, stop):
    cols = a.cols

    def bwd(g, out):
        pieces = []
        if start > 0:
            pieces.append(Tensor(np.zeros((g.rows, start), dtype=g.dtype)))
        pieces.append(g)
        if stop < cols:
            pieces.append(Tensor(np.zeros((g.rows, cols - stop), dtype=g.dtype)))
        return (concat_cols(*pieces) if len(pieces) > 1 else g,)

    return _make("slice", np.ascontiguousarray(a.value[:, start:stop]), (a,), bwd,
                 lambda x: np.ascontiguousarray(x[:, start:stop]))


def take_rows(a, idx):
    """Gather rows ``a[idx]``; repeated indices are allowed."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.intp)
    n = a.rows
    return _make("take_rows", a.value[idx], (a,),
                 lambda g, out: (scatter_rows(g, idx, n),), lambda x: x[idx])


def scatter_rows(a, idx, n):
    """Adjoint of :func:`take_rows`: sum row ``k`` of ``a`` into row ``idx[k]`` of an ``n``-row zero matrix."""
    idx = np.asarray(idx, dtype=np.intp)

    def fwd(x):
        res = np.zeros((n, x.shape[1]), dtype=x.dtype)
        np.add.at(res, idx, x)
        return res

    return _make("scatter_rows", fwd(a.value), (a,),
                 lambda g, out: (take_rows(g, idx),), fwd)


def sum_all(a):
    r, c = a.shape
    return _make("sum_all", a.value.sum().reshape(1, 1), (a,),
                 lambda g, out: (broadcast_all(g, r, c),),
                 lambda x: x.sum().reshape(1, 1))


def sum_rows(a):
    """Sum over rows, ``r x c -> 1 x c``."""
    r = a.rows
    return _make("sum_rows", a.value.sum(axis=0, keepdims=True), (a,),
                 lambda g, out: (broadcast_rows(g, r),),
                 lambda x: x.sum(axis=0, keepdims=True))


def sum_cols(a):
    """Sum over columns, ``r x c -> r x 1``."""
    c = a.cols
    return _make("sum_cols", a.value.sum(axis=1, keepdims=True), (a,),
                 lambda g, out: (broadcast_cols(g, c),),
                 lambda x: x.sum(axis=1, keepdims=True))


def broadcast_all(a, r, c):
    if a.shape != (1, 1):
        raise DimensionError(f"broadcast_all: expected 1x1, got {a.shape}")

    def fwd(x):
        return np.full((r, c), x[0, 0], dtype=x.dtype)

    return _make("broadcast_all", fwd(a.value), (a,),
                 lambda g, out: (sum_all(g),), fwd)


def broadcast_rows(a, r):
    if a.rows != 1:
        raise DimensionError(f"broadcast_rows: expected a single row, got {a.shape}")

    def fwd(x):
        return np.repeat(x, r, axis=0)

    return _make("broadcast_rows", fwd(a.value), (a,),
                 lambda g, out: (sum_rows(g),), fwd)


def broadcast_cols(a, c):
    if a.cols != 1:
        raise DimensionError(f"broadcast_cols: expected a single column, got {a.shape}")

    def fwd(x):
        return np.repeat(x, c, axis=1)

    return _make("broadcast_cols", fwd(a.value), (a,),
                 lambda g, out: (sum_cols(g),), fwd)


def mean(a):
    return scale(sum_all(a), 1.0 / a.value.size)


# --------------------------------------------------------------- activations


def relu(a):
    def bwd(g, out):
        mask = (out.parents[0].value > 0).astype(g.dtype)
        return (mul(g, Tensor(mask)),)

    return _make("relu", np.maximum(a.value, 0.0).astype(a.dtype, copy=False), (a,), bwd,
                 lambda x: np.maximum(x, 0.0).astype(x.dtype, copy=False))


def leaky_relu(a, slope=LEAKY_SLOPE):
    slope = float(slope)

    def fwd(x):
        return np.where(x > 0, x, x * slope).astype(x.dtype, copy=False)

    def bwd(g, out):
        x = out.parents[0].value
        mask = np.where(x > 0, 1.0, slope).astype(g.dtype)
        return (mul(g, Tensor(mask)),)

    return _make("leaky_relu", fwd(a.value), (a,), bwd, fwd)


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a):
    def bwd(g, out):
        return (mul(g, mul(out, shift(neg(out), 1.0))),)

    return _make("sigmoid", _sigmoid(a.value), (a,), bwd, _sigmoid)


def row_norm(a):
    """Euclidean norm of every row, ``r x c -> r x 1``.

    At a zero row the gradient is taken to be zero.
    """
    c = a.cols

    def fwd(x):
        return np.sqrt((x * x).sum(axis=1, keepdims=True))

    def bwd(g, out):
        x = out.parents[0]
        zero = Tensor((out.value == 0).astype(out.dtype))
        safe = add(out, zero)
        return (mul(broadcast_cols(div(g, safe), c), x),)

    return _make("row_norm", fwd(a.value), (a,), bwd, fwd)


# ------------------------------------------------------------------ backward


def _topo_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
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


def backward(output, wrt, higher_order=False):
    """Return d(output)/d(w) for each ``w`` in ``wrt``.

    ``output`` must be 1x1.  Targets unreachable from ``output`` get a zero
    gradient.  With ``higher_order`` set the returned tensors are themselves
    differentiable nodes; otherwise they are constants.
    """
    if output.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) output, got {output.shape}")
    wrt = list(wrt)
    targets = {id(w): i for i, w in enumerate(wrt)}
    result = [None] * len(wrt)
    if output.requires_grad:
        grads = {id(output): Tensor(np.ones((1, 1), dtype=output.dtype))}
        with grad_mode(higher_order):
            for node in reversed(_topo_order(output)):
                g = grads.pop(id(node), None)
                if g is None:
                    continue
                if id(node) in targets:
                    result[targets[id(node)]] = g
                if node._backward is None:
                    continue
                for p, pg in zip(node.parents, node._backward(g, node)):
                    if pg is None or not p.requires_grad:
                        continue
                    prev = grads.get(id(p))
                    grads[id(p)] = pg if prev is None else add(prev, pg)
    for i, w in enumerate(wrt):
        if result[i] is None:
            result[i] = Tensor(np.zeros(w.shape, dtype=w.dtype))
    return result


def grad(output, wrt):
    """First-order gradients as plain arrays."""
    return [g.value for g in backward(output, wrt, higher_order=False)]


def grad_wrt_input(critic_output, x):
    """Differentiable d(critic)/d(x) for a row-wise critic.

    ``critic_output`` is ``B x 1`` with row ``i`` depending only on row ``i``
    of ``x``, so the gradient of its sum holds every row's input gradient.
    Requires an active higher-order :class:`Tape`.
    """
    tape = _active_tape()
    if tape is None or not tape.higher_order:
        raise ContractError("grad_wrt_input requires an active higher-order Tape")
    total = critic_output if critic_output.shape == (1, 1) else sum_all(critic_output)
    return backward(total, [x], higher_order=True)[0]
