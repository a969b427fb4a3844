"""Define-by-run reverse-mode autodiff over dense numpy arrays.

Only the operations the SCN models need are provided. Every op returns a new
:class:`Tensor` that remembers its parents and a vector-Jacobian product; the
graph reachable from a scalar loss is the tape that :func:`backward` replays
in reverse topological order.

Precision follows the inputs: leaves default to float32, and float64 leaves
(used by gradient checks) keep the whole graph in float64.
"""

from __future__ import annotations

import logging

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32
COS_EPS = 1e-6


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "op")

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _vjp=None, op="leaf"):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, op={self.op})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, _wrap(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __mul__(self, c):
        return scale(self, c)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _wrap(x, like):
    """Constant operand for ``like``; Python scalars are broadcast to its shape."""
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=like.dtype)
    return Tensor(np.full(like.shape, arr, dtype=like.dtype) if arr.ndim == 0 else arr)


def _node(data, parents, vjp, op):
    """Create an op output; records the op only if some parent needs grad."""
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _vjp=vjp, op=op)


# -- elementary ops -----------------------------------------------------------

def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _node(out, (a, b), vjp, "matmul")


def add(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def scale(t, c):
    c = float(c)
    return _node(t.data * t.data.dtype.type(c), (t,), lambda g: (g * g.dtype.type(c),), "scale")


def add_bias(x, bias):
    """Add a bias vector along the last axis of ``x``."""
    if bias.data.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"add_bias: bias {bias.shape} does not match {x.shape}")
    red = tuple(range(x.data.ndim - 1))
    return _node(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=red)), "add_bias")


def add_channel_bias(x, bias):
    if x.data.ndim != 4 or bias.data.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ShapeError(f"add_channel_bias: bias {bias.shape} does not match {x.shape}")
    out = x.data + bias.data[None, :, None, None]
    return _node(out, (x, bias), lambda g: (g, g.sum(axis=(0, 2, 3))), "add_channel_bias")


def relu(x):
    mask = x.data > 0
    return _node(np.where(mask, x.data, x.data.dtype.type(0)), (x,), lambda g: (g * mask,), "relu")


def mean(x):
    n = x.data.size
    out = np.asarray(x.data.mean(dtype=x.dtype), dtype=x.dtype)

    def vjp(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return _node(out, (x,), vjp, "mean")


def total(x):
    out = np.asarray(x.data.sum(dtype=x.dtype), dtype=x.dtype)
    return _node(out, (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),), "sum")


def reshape(x, shape):
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes):
    inv = np.argsort(axes)
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def segment(x, start, stop):
    """Contiguous slice ``x[start:stop]`` of a 1-D tensor."""
    if x.data.ndim != 1 or not 0 <= start <= stop <= x.shape[0]:
        raise ShapeError(f"segment [{start}:{stop}] out of range for {x.shape}")
    n = x.shape[0]

    def vjp(g):
        full = np.zeros(n, dtype=g.dtype)
        full[start:stop] = g
        return (full,)

    return _node(x.data[start:stop], (x,), vjp, "segment")


# -- softmax family -------------------------------------------------------------

def _log_softmax_np(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z):
    if z.data.ndim != 2:
        raise ShapeError(f"softmax expects (b, C), got {z.shape}")
    e = np.exp(z.data - z.data.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _node(s, (z,), vjp, "softmax")


def log_softmax(z):
    if z.data.ndim != 2:
        raise ShapeError(f"log_softmax expects (b, C), got {z.shape}")
    ls = _log_softmax_np(z.data)
    s = np.exp(ls)

    def vjp(g):
        return (g - s * g.sum(axis=1, keepdims=True),)

    return _node(ls, (z,), vjp, "log_softmax")


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under ``logits``."""
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"cross_entropy: {labels.shape[0] if labels.ndim else 0} labels for batch {b}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"cross_entropy: label outside [0, {c})")
    ls = _log_softmax_np(logits.data)
    rows = np.arange(b)
    out = np.asarray(-ls[rows, labels].sum(dtype=ls.dtype) / b, dtype=ls.dtype)

    def vjp(g):
        grad = np.exp(ls)
        grad[rows, labels] -= 1
        return (grad * (g / b),)

    return _node(out, (logits,), vjp, "cross_entropy")


def entropy_of_logits(logits):
    """Sum over rows and classes of ``-p log p`` with ``p = softmax(logits)``."""
    if logits.data.ndim != 2:
        raise ShapeError(f"entropy_of_logits expects (b, C), got {logits.shape}")
    ls = _log_softmax_np(logits.data)
    p = np.exp(ls)
    h_rows = -(p * ls).sum(axis=1)
    out = np.asarray(h_rows.sum(dtype=ls.dtype), dtype=ls.dtype)

    def vjp(g):
        # d/dz of -sum p log p = -p * (log p + H_row)
        return (-(p * (ls + h_rows[:, None])) * g,)

    return _node(out, (logits,), vjp, "entropy")


def cosine_sim_sq(u, v, eps=COS_EPS):
    """Squared cosine similarity ``(u.v)^2 / max(|u||v|, eps)^2``."""
    if u.data.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine_sim_sq: shapes {u.shape} and {v.shape}")
    a, b = u.data, v.data
    dot = a @ b
    nu = np.sqrt(a @ a)
    nv = np.sqrt(b @ b)
    denom = nu * nv
    if denom < eps:
        if denom == 0:
            log.warning("cosine_sim_sq: zero-norm operand, returning 0")
        d = a.dtype.type(eps)
        cos = dot / d
        out = np.asarray(cos * cos, dtype=a.dtype)

        def vjp_clamped(g):
            return (2 * cos * g * b / d, 2 * cos * g * a / d)

        return _node(out, (u, v), vjp_clamped, "cos2")
    cos = dot / denom
    out = np.asarray(cos * cos, dtype=a.dtype)

    def vjp(g):
        k = 2 * cos * g
        du = b / denom - cos * a / (nu * nu)
        dv = a / denom - cos * b / (nv * nv)
        return (k * du, k * dv)

    return _node(out, (u, v), vjp, "cos2")


# -- convolution & pooling --------------------------------------------------------

def _pad(x, pads, mode):
    top, bottom, left, right = pads
    if not any(pads):
        return x
    width = ((0, 0), (0, 0), (top, bottom), (left, right))
    return np.pad(x, width, mode="wrap" if mode == "circular" else "constant")


def _unpad_adjoint(g, pads, mode, h, w):
    top, bottom, left, right = pads
    if not any(pads):
        return g
    if mode != "circular":
        return g[:, :, top:top + h, left:left + w]
    # fold the wrapped border back onto the interior, one axis at a time
    return _fold(_fold(g, 2, top, h), 3, left, w)


def _fold(g, axis, before, n):
    g = np.moveaxis(g, axis, -1)
    out = g[..., before:before + n].copy()
    after = g.shape[-1] - before - n
    if before:
        out[..., n - before:] += g[..., :before]
    if after:
        out[..., :after] += g[..., before + n:]
    return np.moveaxis(out, -1, axis)


def conv2d(x, weight, stride=1, pads=(0, 0, 0, 0), mode="zeros"):
    """2-D cross-correlation of (b, C, H, W) with (O, C, kh, kw) weights.

    ``pads`` is (top, bottom, left, right); ``mode`` is ``"zeros"`` or
    ``"circular"``.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    b, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    xp = _pad(x.data, pads, mode)
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = kernels.im2col(xp, kh, kw, stride)  # (b, ho*wo, c*kh*kw)
    wmat = weight.data.reshape(o, -1)
    out = (cols @ wmat.T).reshape(b, ho, wo, o).transpose(0, 3, 1, 2)

    def vjp(g):
        gm = g.transpose(0, 2, 3, 1).reshape(b, ho * wo, o)
        gw = (gm.reshape(-1, o).T @ cols.reshape(-1, cols.shape[2])).reshape(weight.shape)
        if not x.requires_grad:
            return (None, gw)
        gxp = kernels.col2im(gm @ wmat, c, hp, wp, kh, kw, stride)
        return (_unpad_adjoint(gxp, pads, mode, h, w), gw)

    return _node(np.ascontiguousarray(out), (x, weight), vjp, "conv2d")


def global_max_pool(x):
    """(b, C, H, W) -> (b, C); gradient goes to the first maximal position."""
    b, c, h, w = x.shape
    flat = x.data.reshape(b, c, h * w)
    idx = flat.argmax(axis=2)
    out = np.take_along_axis(flat, idx[..., None], axis=2)[..., 0]

    def vjp(g):
        gin = np.zeros((b, c, h * w), dtype=g.dtype)
        np.put_along_axis(gin, idx[..., None], g[..., None], axis=2)
        return (gin.reshape(b, c, h, w),)

    return _node(out, (x,), vjp, "global_max_pool")


def global_avg_pool(x):
    b, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), dtype=x.dtype)

    def vjp(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).astype(g.dtype),)

    return _node(out, (x,), vjp, "global_avg_pool")


# -- backward -------------------------------------------------------------------

def tape(loss):
    """Nodes reachable from ``loss`` in topological order (inputs first)."""
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss, wrt=None):
    """Backpropagate from a scalar ``loss``.

    Returns a dict mapping each requires-grad leaf (or each tensor in ``wrt``)
    to its gradient array; leaves the loss does not depend on get zeros. The
    gradients are also stored on ``leaf.grad``.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    order = tape(loss)
    leaves = []
    for node in reversed(order):
        g = grads.pop(id(node), None) if node._parents else grads.get(id(node))
        if node.is_leaf:
            if node.requires_grad:
                leaves.append(node)
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad or pg is None:
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    result = {}
    targets = leaves if wrt is None else list(wrt)
    for t in targets:
        g = grads.get(id(t))
        if g is None:
            g = np.zeros_like(t.data)
        t.grad = g.reshape(t.shape)
        result[t] = t.grad
    return result


def numeric_grad(fn, arrays, h=1e-5):
    """Central finite differences of scalar ``fn(*arrays)`` w.r.t. each array."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(*arrays)
            flat[i] = orig - h
            fm = fn(*arrays)
            flat[i] = orig
            gf[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out
