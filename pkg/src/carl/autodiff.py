"""Dense float64 arrays with tape-based reverse-mode differentiation.

Only the kernels the rating model needs are provided. Every op checks its
output for NaN/Inf and raises :class:`~carl.errors.NumericFault` naming
itself, so a blown-up training step points at the culprit directly.

Recording happens only inside an active :class:`Tape`::

    with Tape() as tape:
        loss = (x @ w).sum()
        tape.backward(loss)

Outside a tape the same functions just compute values (inference mode).
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

from .errors import ConfigError, NumericFault, ShapeError

_TAPES: list["Tape"] = []


def active_tape():
    return _TAPES[-1] if _TAPES else None


class _Node:
    __slots__ = ("name", "out", "parents", "backward", "visits")

    def __init__(self, name, out, parents, backward):
        self.name = name
        self.out = out
        self.parents = parents
        self.backward = backward
        self.visits = 0


class Tape:
    """Append-only record of the ops executed during one forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, name, out, parents, backward):
        out.node_id = len(self.nodes)
        self.nodes.append(_Node(name, out, parents, backward))

    def backward(self, root: "DiffArray", seed=None):
        """Propagate d(root)/d(.) into ``.grad`` of every participating leaf.

        Nodes are visited once each, newest first; since ops are appended as
        they execute, that order is a reverse topological sort.
        """
        if root.node_id is None or root.node_id >= len(self.nodes) or self.nodes[root.node_id].out is not root:
            raise ValueError("root was not produced on this tape")
        if seed is None:
            seed = np.ones_like(root.data)
        root._accumulate(np.asarray(seed, dtype=np.float64))
        for node in reversed(self.nodes[: root.node_id + 1]):
            node.visits += 1
            g = node.out._grad
            if g is None:
                continue
            grads = node.backward(g)
            handed_out = set()
            for parent, pg in zip(node.parents, grads):
                if pg is not None and parent.requires_grad:
                    # adopt freshly allocated buffers instead of copying them
                    owned = pg.flags.owndata and pg is not g and id(pg) not in handed_out
                    parent._accumulate(pg, copy=not owned)
                    handed_out.add(id(pg))
            if not node.out.is_leaf:
                # intermediate buffers are not needed once consumed
                node.out._grad = None

    def clear(self):
        for node in self.nodes:
            node.out.node_id = None
        self.nodes.clear()


class DiffArray:
    """A dense value plus a same-shape gradient accumulator."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, _leaf=True):
        self.data = np.array(data, dtype=np.float64, copy=True) if _leaf else data
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.node_id = None
        self.is_leaf = _leaf
        self._grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def grad(self):
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.data.shape:
            raise ShapeError("grad", self.data.shape, value.shape)
        self._grad = value

    def zero_grad(self):
        self._grad = np.zeros_like(self.data)

    def _accumulate(self, g, copy=True):
        if g.shape != self.data.shape:
            raise ShapeError("accumulate", self.data.shape, g.shape)
        if self._grad is None:
            self._grad = np.array(g, dtype=np.float64, copy=True) if copy or g.dtype != np.float64 else g
        else:
            self._grad += g

    def numpy(self):
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"DiffArray(shape={self.shape}{label})"

    def __len__(self):
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_array(x) -> DiffArray:
    return x if isinstance(x, DiffArray) else DiffArray(x)


def parameter(data, name=None) -> DiffArray:
    return DiffArray(data, requires_grad=True, name=name)


def _make(name, data, parents, backward) -> DiffArray:
    if not np.all(np.isfinite(data)):
        raise NumericFault(name)
    needs = any(p.requires_grad for p in parents)
    out = DiffArray(data, requires_grad=needs, _leaf=False)
    tape = active_tape()
    if tape is not None and needs:
        tape.record(name, out, parents, backward)
    return out


def _check_finite_inputs(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a.data)):
            raise NumericFault(name, "non-finite input")


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_array(a), as_array(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_array(a), as_array(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", a.data - b.data, (a, b), backward)


def mul(a, b):
    """Elementwise (Hadamard) product with numpy broadcasting."""
    a, b = as_array(a), as_array(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make("mul", a.data * b.data, (a, b), backward)


elementwise_mul = mul


def div(a, b):
    a, b = as_array(a), as_array(b)
    _broadcast_shape("div", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _make("div", out, (a, b), backward)


def neg(a):
    a = as_array(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def square(a):
    a = as_array(a)
    return _make("square", a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def relu(x):
    x = as_array(x)
    _check_finite_inputs("relu", x)
    mask = x.data > 0
    return _make("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def tanh(x):
    x = as_array(x)
    _check_finite_inputs("tanh", x)
    y = np.tanh(x.data)
    return _make("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def clip(x, lo, hi):
    """Clamp into [lo, hi]; the gradient is zero wherever clamping bites."""
    x = as_array(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _make("clip", np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def where(cond, a, b):
    """Pick ``a`` where ``cond`` holds, else ``b``; gradient follows the pick."""
    a, b = as_array(a), as_array(b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)

    def backward(g):
        return _unbroadcast(np.where(cond, g, 0.0), a.shape), _unbroadcast(np.where(cond, 0.0, g), b.shape)

    return _make("where", out, (a, b), backward)


def softmax(x, axis=-1):
    x = as_array(x)
    _check_finite_inputs("softmax", x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make("softmax", y, (x,), backward)


# ---------------------------------------------------------------------------
# reductions and reshaping
# ---------------------------------------------------------------------------


def sum_(x, axis=None, keepdims=False):
    x = as_array(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make("sum", np.asarray(out, dtype=np.float64), (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_array(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else x.shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _make("mean", np.asarray(out, dtype=np.float64), (x,), backward)


def mean_rows(x):
    """Mean of each row (reduces the last axis)."""
    return mean(x, axis=-1)


def mean_cols(x):
    """Mean of each column (reduces the second-to-last axis)."""
    return mean(x, axis=-2)


def max_(x, axis):
    """Maximum along ``axis``; the gradient goes to the first arg-max."""
    x = as_array(x)
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make("max", out, (x,), backward)


def reshape(x, shape):
    x = as_array(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None
    return _make("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def expand_dims(x, axis):
    x = as_array(x)
    return _make("expand_dims", np.expand_dims(x.data, axis), (x,), lambda g: (np.squeeze(g, axis),))


def transpose(x):
    """Swap the last two axes (plain transpose for matrices)."""
    x = as_array(x)
    if x.ndim < 2:
        raise ShapeError("transpose", x.shape)
    return _make("transpose", np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def concat(parts, axis=-1):
    parts = [as_array(p) for p in parts]
    if not parts:
        raise ValueError("concat needs at least one part")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(p.shape for p in parts)) from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make("concat", out, tuple(parts), backward)


def _scatter_rows(n_rows, idx, g2d):
    """Sum rows of ``g2d`` into an ``n_rows`` table at ``idx``."""
    if idx.size == 0:
        return np.zeros((n_rows,) + g2d.shape[1:])
    if g2d.ndim == 1:
        out = np.zeros(n_rows)
        np.add.at(out, idx, g2d)
        return out
    # one-hot sparse product: fixed summation order, much faster than add.at
    onehot = sparse.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(n_rows, idx.size))
    flat = g2d.reshape(idx.size, -1)
    return np.asarray(onehot @ flat).reshape((n_rows,) + g2d.shape[1:])


def take(x, idx, axis=0, frozen=()):
    """Gather slices of ``x`` along ``axis`` (embedding / column lookup).

    Rows listed in ``frozen`` never receive gradient.
    """
    x = as_array(x)
    idx = np.asarray(idx)
    if idx.dtype.kind not in "iu":
        raise TypeError("take indices must be integers")
    extent = x.shape[axis]
    if idx.size and (idx.min() < -extent or idx.max() >= extent):
        raise IndexError(f"take: index out of range for axis of extent {extent}")
    out = np.take(x.data, idx, axis=axis)

    def backward(g):
        moved = np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(idx.ndim)))
        flat = moved.reshape((idx.size,) + moved.shape[idx.ndim:])
        table = _scatter_rows(extent, idx.reshape(-1) % extent, flat)
        if frozen:
            table[list(frozen)] = 0.0
        return (np.moveaxis(table, 0, axis),)

    return _make("take", out, (x,), backward)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b):
    """Matrix product, batched over leading axes with broadcasting."""
    a, b = as_array(a), as_array(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make("matmul", out, (a, b), backward)


def slide_window_affine(doc, weights, window=None):
    """1-D convolution without bias, written as an affine map per window.

    ``doc`` is ``[..., n, t]`` and ``weights`` is ``[f, s*t]`` where each
    filter row acts on the row-major flattening of ``s`` consecutive rows.
    The input is padded with ``s-1`` zero rows at the end so the output
    keeps ``n`` rows: ``out[..., h, j] = weights[j] . flat(doc[h:h+s])``.
    """
    doc, weights = as_array(doc), as_array(weights)
    if doc.ndim < 2 or weights.ndim != 2:
        raise ShapeError("slide_window_affine", doc.shape, weights.shape)
    n, t = doc.shape[-2:]
    f, width = weights.shape
    if n < 1:
        raise ShapeError("slide_window_affine", doc.shape, weights.shape)
    if window is None:
        if t == 0 or width % t:
            raise ShapeError("slide_window_affine", doc.shape, weights.shape)
        window = width // t
    if window < 1:
        raise ConfigError(f"window size must be positive, got {window}")
    if window * t != width:
        raise ShapeError("slide_window_affine", doc.shape, weights.shape)
    s = window
    lead = doc.shape[:-2]
    pad = np.zeros(lead + (s - 1, t))
    padded = np.concatenate([doc.data, pad], axis=-2)
    # columns k*f..(k+1)*f of `mixed` hold the filters' slice for window offset k
    mixed = weights.data.reshape(f, s, t).transpose(2, 1, 0).reshape(t, s * f)
    proj = padded @ mixed
    out = np.zeros(lead + (n, f))
    for k in range(s):
        out += proj[..., k : k + n, k * f : (k + 1) * f]

    def backward(g):
        gproj = np.zeros(lead + (n + s - 1, s * f))
        for k in range(s):
            gproj[..., k : k + n, k * f : (k + 1) * f] += g
        gdoc = gw = None
        if doc.requires_grad:
            gdoc = (gproj @ mixed.T)[..., :n, :]
        if weights.requires_grad:
            gmixed = padded.reshape(-1, t).T @ gproj.reshape(-1, s * f)
            gw = gmixed.reshape(t, s, f).transpose(2, 1, 0).reshape(f, s * t)
        return gdoc, gw

    return _make("slide_window_affine", out, (doc, weights), backward)


# ---------------------------------------------------------------------------
# stochastic regularisation
# ---------------------------------------------------------------------------


def dropout(x, rate, training, rng=None):
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""
    x = as_array(x)
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make("dropout", x.data * mask, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------


def glorot_uniform(rng, shape, fan_in=None, fan_out=None):
    """Uniform in +-sqrt(6 / (fan_in + fan_out))."""
    if fan_in is None:
        fan_in = shape[-1]
    if fan_out is None:
        fan_out = shape[0] if len(shape) > 1 else 1
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
