"""Dense float64 tensors with reverse-mode automatic differentiation.

The tape is the DAG of ``Tensor`` nodes itself: every operation attaches an
adjoint closure to its output when some input requires gradients, and
``backward`` replays the closures once per node in reverse topological order.
Gradients accumulate additively across fan-out; the caller zeroes them
explicitly before each optimization step.

Broadcasting is intentionally narrow: a scalar combines with anything, and a
1-D row vector combines with a 2-D matrix whose trailing dimension matches.
Everything else raises ``ShapeError``. Non-finite values (NaN/Inf) are a
contract violation and raise ``NonFiniteError`` at the op that produced them.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "ShapeError", "NonFiniteError", "backward", "no_grad",
    "add", "sub", "mul", "div", "neg", "matmul", "dot",
    "relu", "sigmoid", "tanh", "exp", "log", "sqrt", "clip", "maximum_scalar",
    "softmax_rows", "layernorm_rows", "sum_all", "mean_all", "mean0",
    "take_rows", "row", "cols", "concat", "concat_cols", "concat_rows",
    "stack_scalars", "scale_rows", "segment_sum", "reshape", "transpose",
    "cosine",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NonFiniteError(ValueError):
    """A tensor came out holding NaN or Inf."""


class Tensor:
    """A dense float64 array plus an optional slot on the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor holds NaN or Inf")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._bw = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.size != 1:
            raise ShapeError("item() expects a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that suspends tape recording (inference paths)."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev


def _result(data, parents, bw):
    out = Tensor(data)
    if _GRAD_ENABLED[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._bw = bw
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def backward(loss):
    """Populate ``grad`` on every tape ancestor of a scalar loss."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ShapeError("backward expects a scalar loss")
    if not loss.requires_grad:
        raise ValueError("loss is detached from the gradient tape")

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._bw is not None and node.grad is not None:
            node._bw(node.grad)


# ---------------------------------------------------------------------------
# broadcasting helpers (scalar-with-tensor, row-vector-with-matrix only)

def _broadcast_shape(sa, sb):
    if sa == sb:
        return sa
    if sa == ():
        return sb
    if sb == ():
        return sa
    if len(sa) == 2 and sb == (sa[1],):
        return sa
    if len(sb) == 2 and sa == (sb[1],):
        return sb
    raise ShapeError(f"shapes {sa} and {sb} are not broadcast-compatible "
                     "(only scalar-with-tensor and row-vector-with-matrix)")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape == ():
        return g.sum()
    return g.sum(axis=0)  # row vector against matrix


# ---------------------------------------------------------------------------
# arithmetic

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    data = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _result(data, (a, b), bw)


def sub(a, b):
    return add(a, neg(_as_tensor(b)))


def neg(x):
    x = _as_tensor(x)

    def bw(g):
        _accum(x, -g)

    return _result(-x.data, (x,), bw)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    data = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _result(data, (a, b), bw)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    data = a.data / b.data
    if not np.isfinite(data).all():
        raise NonFiniteError("division produced NaN or Inf")

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _result(data, (a, b), bw)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects two matrices")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _result(data, (a, b), bw)


def dot(u, v):
    u, v = _as_tensor(u), _as_tensor(v)
    if u.data.ndim != 1 or v.data.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"dot expects equal-length vectors, got {u.shape} and {v.shape}")
    data = np.dot(u.data, v.data)

    def bw(g):
        _accum(u, g * v.data)
        _accum(v, g * u.data)

    return _result(data, (u, v), bw)


# ---------------------------------------------------------------------------
# pointwise nonlinearities

def relu(x):
    x = _as_tensor(x)
    data = np.maximum(x.data, 0.0)

    def bw(g):
        _accum(x, g * (x.data > 0.0))

    return _result(data, (x,), bw)


def sigmoid(x):
    x = _as_tensor(x)
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x.data))
    data = np.where(x.data >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bw(g):
        _accum(x, g * data * (1.0 - data))

    return _result(data, (x,), bw)


def tanh(x):
    x = _as_tensor(x)
    data = np.tanh(x.data)

    def bw(g):
        _accum(x, g * (1.0 - data * data))

    return _result(data, (x,), bw)


def exp(x):
    x = _as_tensor(x)
    with np.errstate(over="ignore"):
        data = np.exp(x.data)
    if not np.isfinite(data).all():
        raise NonFiniteError("exp overflowed")

    def bw(g):
        _accum(x, g * data)

    return _result(data, (x,), bw)


def log(x):
    x = _as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(x.data)
    if not np.isfinite(data).all():
        raise NonFiniteError("log of a non-positive value")

    def bw(g):
        _accum(x, g / x.data)

    return _result(data, (x,), bw)


def sqrt(x):
    x = _as_tensor(x)
    with np.errstate(invalid="ignore"):
        data = np.sqrt(x.data)
    if not np.isfinite(data).all():
        raise NonFiniteError("sqrt of a negative value")

    def bw(g):
        _accum(x, g / (2.0 * data))

    return _result(data, (x,), bw)


def clip(x, lo, hi):
    x = _as_tensor(x)
    data = np.clip(x.data, lo, hi)

    def bw(g):
        _accum(x, g * ((x.data >= lo) & (x.data <= hi)))

    return _result(data, (x,), bw)


def maximum_scalar(x, c):
    x = _as_tensor(x)
    c = float(c)
    data = np.maximum(x.data, c)

    def bw(g):
        _accum(x, g * (x.data >= c))

    return _result(data, (x,), bw)


# ---------------------------------------------------------------------------
# row-structured primitives

def softmax_rows(x):
    """Row-wise softmax with max subtraction for stability."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("softmax_rows expects a matrix")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        inner = (g * data).sum(axis=1, keepdims=True)
        _accum(x, data * (g - inner))

    return _result(data, (x,), bw)


def layernorm_rows(x, eps=1e-12):
    """Normalize each row to zero mean and unit variance (no affine)."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("layernorm_rows expects a matrix")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    data = xc * inv

    def bw(g):
        gm = g.mean(axis=1, keepdims=True)
        gy = (g * data).mean(axis=1, keepdims=True)
        _accum(x, inv * (g - gm - data * gy))

    return _result(data, (x,), bw)


def sum_all(x):
    x = _as_tensor(x)

    def bw(g):
        _accum(x, np.full_like(x.data, float(g)))

    return _result(x.data.sum(), (x,), bw)


def mean_all(x):
    x = _as_tensor(x)
    n = x.data.size

    def bw(g):
        _accum(x, np.full_like(x.data, float(g) / n))

    return _result(x.data.mean(), (x,), bw)


def mean0(x):
    """Mean over axis 0 of a matrix -> row vector."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("mean0 expects a matrix")
    m = x.shape[0]

    def bw(g):
        _accum(x, np.repeat(g[None, :] / m, m, axis=0))

    return _result(x.data.mean(axis=0), (x,), bw)


# ---------------------------------------------------------------------------
# gather / scatter / layout

def take_rows(x, idx):
    """Gather rows (2-D) or elements (1-D) by integer index, with repeats."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("take_rows expects a 1-D index array")
    data = x.data[idx]

    def bw(g):
        acc = np.zeros_like(x.data)
        np.add.at(acc, idx, g)
        _accum(x, acc)

    return _result(data, (x,), bw)


def row(x, i):
    """Extract row i of a matrix as a vector."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("row expects a matrix")
    i = int(i)

    def bw(g):
        acc = np.zeros_like(x.data)
        acc[i] = g
        _accum(x, acc)

    return _result(x.data[i].copy(), (x,), bw)


def cols(x, start, stop):
    """Column slice [start:stop) of a matrix."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("cols expects a matrix")

    def bw(g):
        acc = np.zeros_like(x.data)
        acc[:, start:stop] = g
        _accum(x, acc)

    return _result(x.data[:, start:stop].copy(), (x,), bw)


def concat(parts):
    """Concatenate 1-D tensors into one vector."""
    parts = [_as_tensor(p) for p in parts]
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError("concat expects vectors")
    sizes = [p.data.size for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[a:b])

    return _result(np.concatenate([p.data for p in parts]), parts, bw)


def concat_cols(parts):
    """Concatenate matrices along columns."""
    parts = [_as_tensor(p) for p in parts]
    rows_ = {p.data.shape[0] for p in parts}
    if any(p.data.ndim != 2 for p in parts) or len(rows_) != 1:
        raise ShapeError("concat_cols expects matrices with equal row counts")
    widths = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def bw(g):
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[:, a:b])

    return _result(np.concatenate([p.data for p in parts], axis=1), parts, bw)


def concat_rows(parts):
    """Concatenate matrices along rows."""
    parts = [_as_tensor(p) for p in parts]
    cols_ = {p.data.shape[1] for p in parts}
    if any(p.data.ndim != 2 for p in parts) or len(cols_) != 1:
        raise ShapeError("concat_rows expects matrices with equal column counts")
    heights = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + heights)

    def bw(g):
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[a:b])

    return _result(np.concatenate([p.data for p in parts], axis=0), parts, bw)


def stack_scalars(parts):
    """Stack scalar tensors into one vector."""
    parts = [_as_tensor(p) for p in parts]
    for p in parts:
        if p.data.size != 1:
            raise ShapeError("stack_scalars expects scalars")

    def bw(g):
        for i, p in enumerate(parts):
            _accum(p, np.asarray(g[i]).reshape(p.data.shape))

    return _result(np.array([float(p.data.reshape(())) for p in parts]), parts, bw)


def scale_rows(x, v):
    """Multiply row i of matrix x by v[i]."""
    x, v = _as_tensor(x), _as_tensor(v)
    if x.data.ndim != 2 or v.data.shape != (x.shape[0],):
        raise ShapeError("scale_rows expects a matrix and a per-row vector")
    data = x.data * v.data[:, None]

    def bw(g):
        _accum(x, g * v.data[:, None])
        _accum(v, (g * x.data).sum(axis=1))

    return _result(data, (x, v), bw)


def segment_sum(x, seg, num):
    """Sum rows (or elements) of x into `num` buckets given by seg ids."""
    x = _as_tensor(x)
    seg = np.asarray(seg, dtype=np.int64)
    if seg.ndim != 1 or seg.shape[0] != x.data.shape[0]:
        raise ShapeError("segment ids must align with the leading axis")
    out = np.zeros((num,) + x.data.shape[1:])
    np.add.at(out, seg, x.data)

    def bw(g):
        _accum(x, g[seg])

    return _result(out, (x,), bw)


def reshape(x, shape):
    x = _as_tensor(x)
    orig = x.data.shape

    def bw(g):
        _accum(x, g.reshape(orig))

    return _result(x.data.reshape(shape), (x,), bw)


def transpose(x):
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("transpose expects a matrix")

    def bw(g):
        _accum(x, g.T)

    return _result(x.data.T.copy(), (x,), bw)


# ---------------------------------------------------------------------------
# similarity

def cosine(u, v, eps=1e-8):
    """Cosine similarity u.v / max(|u||v|, eps), differentiable in u and v.

    The denominator is computed as sqrt(max((u.u)(v.v), eps^2)), which is
    identical piecewise and keeps cosine(u, u) exactly 1.0 in float64.
    """
    u, v = _as_tensor(u), _as_tensor(v)
    if u.data.ndim != 1 or v.data.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine expects equal-length vectors, got {u.shape} and {v.shape}")
    if eps <= 0:
        raise ValueError("cosine epsilon must be positive")
    num = dot(u, v)
    den = sqrt(maximum_scalar(mul(dot(u, u), dot(v, v)), eps * eps))
    return div(num, den)
