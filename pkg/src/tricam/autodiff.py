"""A small reverse-mode autodiff engine over numpy float64 arrays.

Every op builds a node holding its value, its parents and a closure that pushes
the output gradient back to the parents.  ``Tensor.backward`` walks the graph in
reverse topological order.  Images use NHWC layout.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 parents: tuple = (), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        for node in order:
            node.grad = None
        self.grad = np.asarray(grad, dtype=np.float64).copy()
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _needs(*ts) -> bool:
    return any(t.requires_grad for t in ts)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _node(data, parents, fn) -> Tensor:
    req = _needs(*parents)
    return Tensor(data, requires_grad=req, parents=parents if req else (),
                  backward_fn=fn if req else None)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), fn)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: a._accum(-g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), fn)


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: a._accum(2.0 * a.data * g))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node(a.data @ b.data, (a, b), fn)


def linear(x, w, b) -> Tensor:
    """x (N, in) @ w (in, out) + b (out,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)

    def fn(g):
        if x.requires_grad:
            x._accum(g @ w.data.T)
        if w.requires_grad:
            w._accum(x.data.T @ g)
        if b.requires_grad:
            b._accum(g.sum(axis=0))

    return _node(x.data @ w.data + b.data, (x, w, b), fn)


def elu(a) -> Tensor:
    """ELU with alpha = 1; continuously differentiable, which keeps
    finite-difference checks meaningful across the origin."""
    a = as_tensor(a)
    neg_part = np.expm1(np.minimum(a.data, 0.0))
    pos = a.data > 0
    out = np.where(pos, a.data, neg_part)

    def fn(g):
        a._accum(g * np.where(pos, 1.0, neg_part + 1.0))

    return _node(out, (a,), fn)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: a._accum(g * mask))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(old)))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _node(a.data.transpose(axes), (a,), lambda g: a._accum(g.transpose(inv)))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def fn(g):
        full = np.zeros_like(a.data)
        if _has_fancy(idx):
            np.add.at(full, idx, g)     # repeated indices accumulate
        else:
            full[idx] = g
        a._accum(full)

    return _node(a.data[idx], (a,), fn)


def _has_fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(ts, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    ax = axis % ts[0].data.ndim
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def fn(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return _node(np.concatenate([t.data for t in ts], axis=ax), tuple(ts), fn)


def stack(ts, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    ax = axis % (ts[0].data.ndim + 1)

    def fn(g):
        for i, t in enumerate(ts):
            if t.requires_grad:
                t._accum(np.take(g, i, axis=ax))

    return _node(np.stack([t.data for t in ts], axis=ax), tuple(ts), fn)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), fn)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    # summing in sorted order makes the result exactly permutation-equivariant
    s = e / np.sort(e, axis=axis).sum(axis=axis, keepdims=True)

    def fn(g):
        a._accum(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _node(s, (a,), fn)


def conv2d(x, w, b) -> Tensor:
    """Valid, stride-1 convolution.  x (N, H, W, C), w (kh, kw, C, O), b (O,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    n, h, wd, c = x.shape
    kh, kw, _, o = w.shape
    ho, wo = h - kh + 1, wd - kw + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kh}x{kw} larger than input {h}x{wd}")
    # (N, Ho, Wo, C, kh, kw) -> (N, Ho, Wo, kh, kw, C) to match w's layout
    win = sliding_window_view(x.data, (kh, kw), axis=(1, 2))
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, kh * kw * c)
    wmat = w.data.reshape(kh * kw * c, o)
    out = (cols @ wmat + b.data).reshape(n, ho, wo, o)

    def fn(g):
        gm = g.reshape(n * ho * wo, o)
        if w.requires_grad:
            w._accum((cols.T @ gm).reshape(w.shape))
        if b.requires_grad:
            b._accum(gm.sum(axis=0))
        if x.requires_grad:
            gcols = (gm @ wmat.T).reshape(n, ho, wo, kh, kw, c)
            gx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    gx[:, i:i + ho, j:j + wo, :] += gcols[:, :, :, i, j, :]
            x._accum(gx)

    return _node(out, (x, w, b), fn)


def avgpool2(x) -> Tensor:
    """2x2 average pooling, stride 2; a trailing odd row/column is dropped."""
    x = as_tensor(x)
    n, h, wd, c = x.shape
    ho, wo = h // 2, wd // 2
    crop = x.data[:, :2 * ho, :2 * wo, :]
    out = crop.reshape(n, ho, 2, wo, 2, c).mean(axis=(2, 4))

    def fn(g):
        gx = np.zeros_like(x.data)
        up = np.repeat(np.repeat(g * 0.25, 2, axis=1), 2, axis=2)
        gx[:, :2 * ho, :2 * wo, :] = up
        x._accum(gx)

    return _node(out, (x,), fn)


def conv_pool(x, w, b) -> Tensor:
    """Valid k x k convolution followed by 2x2 average pooling, fused.

    Average-pooling a stride-1 convolution equals a stride-2 convolution with a
    (k+1) x (k+1) kernel built from the four shifted copies of ``w``; computing
    it that way skips the full-resolution intermediate.  Same shapes as
    ``conv2d``; output spatial size is ((h-k+1)//2, (w-k+1)//2).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    n, h, wd, c = x.shape
    kh, kw, _, o = w.shape
    ho, wo = (h - kh + 1) // 2, (wd - kw + 1) // 2
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kh}x{kw} plus pooling does not fit input {h}x{wd}")
    k4 = np.zeros((kh + 1, kw + 1, c, o))
    for di in (0, 1):
        for dj in (0, 1):
            k4[di:di + kh, dj:dj + kw] += w.data
    k4 *= 0.25
    win = sliding_window_view(x.data, (kh + 1, kw + 1), axis=(1, 2))[:, 0:2 * ho:2, 0:2 * wo:2]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        n * ho * wo, (kh + 1) * (kw + 1) * c)
    kmat = k4.reshape(-1, o)
    out = (cols @ kmat + b.data).reshape(n, ho, wo, o)

    def fn(g):
        gm = g.reshape(n * ho * wo, o)
        if w.requires_grad:
            gk4 = (cols.T @ gm).reshape(k4.shape) * 0.25
            gw = np.zeros(w.shape)
            for di in (0, 1):
                for dj in (0, 1):
                    gw += gk4[di:di + kh, dj:dj + kw]
            w._accum(gw)
        if b.requires_grad:
            b._accum(gm.sum(axis=0))
        if x.requires_grad:
            gcols = (gm @ kmat.T).reshape(n, ho, wo, kh + 1, kw + 1, c)
            gx = np.zeros_like(x.data)
            for i in range(kh + 1):
                for j in range(kw + 1):
                    gx[:, i:i + 2 * ho:2, j:j + 2 * wo:2, :] += gcols[:, :, :, i, j, :]
            x._accum(gx)

    return _node(out, (x, w, b), fn)
