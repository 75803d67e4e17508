"""A small reverse-mode autodiff engine over numpy arrays.

Only the primitives the descriptor network and the losses need are provided.
Every op records a closure mapping the output gradient to one gradient per
parent; :func:`backward` walks the recorded graph once and then frees it.
"""

from __future__ import annotations

import numpy as np

from ..errors import GraphConsumed, ShapeMismatch

_DEBUG = False


def set_debug(flag: bool) -> None:
    """Enable a finiteness check on every op output."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        data = np.asarray(data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None
        self._consumed = False

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self._backward is None and not self._consumed

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def backward(self, grad=None):
        backward(self, grad)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, key):
        return take(self, key)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _pair(a, b):
    """Promote a bare constant to the dtype of the tensor it meets."""
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype) if isinstance(b, Tensor) else a)
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def _node(data, parents, backward_fn, dtype=None) -> Tensor:
    if dtype is not None:
        data = np.asarray(data, dtype=dtype)
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by " + backward_fn.__qualname__.split(".")[0])
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it.

    The graph below ``loss`` is released afterwards; a second call raises
    :class:`GraphConsumed`.
    """
    if loss._consumed:
        raise GraphConsumed("backward already ran through this graph")
    if grad is None:
        if loss.data.size != 1:
            raise ShapeMismatch("grad must be given for non-scalar outputs")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        loss._consumed = True
        return
    order = []
    seen = set()
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._consumed = True
    loss._consumed = True


# --------------------------------------------------------------------------
# elementwise and reductions

def add(a, b):
    a, b = _pair(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), back)


def sub(a, b):
    a, b = _pair(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), back)


def mul(a, b):
    a, b = _pair(a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), back)


def div(a, b):
    a, b = _pair(a, b)

    def back(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(a.data / b.data, (a, b), back)


def square(x):
    x = as_tensor(x)

    def back(g):
        return (2.0 * g * x.data,)

    return _node(x.data * x.data, (x,), back)


def relu(x):
    x = as_tensor(x)
    pos = x.data > 0

    def back(g):
        return (g * pos,)

    return _node(np.where(pos, x.data, 0).astype(x.dtype), (x,), back)


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _node(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), back)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / n)


def reshape(x, shape):
    x = as_tensor(x)

    def back(g):
        return (g.reshape(x.shape),)

    return _node(x.data.reshape(shape), (x,), back)


def take(x, key):
    """Basic or advanced indexing with a scatter-add backward."""
    x = as_tensor(x)

    def back(g):
        out = np.zeros_like(x.data)
        np.add.at(out, key, g)
        return (out,)

    return _node(np.asarray(x.data[key]), (x,), back)


def gather_rows(x, idx):
    """``x[idx]`` for a 2-D ``x`` and 1-D integer ``idx``."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]

    def back(g):
        out = np.zeros_like(x.data)
        # bincount per column beats np.add.at for tall, narrow matrices
        for c in range(x.shape[1]):
            out[:, c] = np.bincount(idx, weights=g[:, c], minlength=n)
        return (out,)

    return _node(x.data[idx], (x,), back)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), back)


def transpose(x):
    x = as_tensor(x)

    def back(g):
        return (g.T,)

    return _node(x.data.T, (x,), back)


# --------------------------------------------------------------------------
# vector ops used by the losses

def row_norm(x):
    """Euclidean norm along the last axis; the gradient at 0 is taken as 0."""
    x = as_tensor(x)
    n = np.sqrt(np.sum(x.data * x.data, axis=-1))

    def back(g):
        safe = np.where(n > 0, n, 1.0)
        return ((g / safe)[..., None] * x.data * (n > 0)[..., None],)

    return _node(n, (x,), back)


def l2_normalize(x, min_norm=1e-12):
    """Scale each row (last axis) to unit length."""
    x = as_tensor(x)
    n = np.sqrt(np.sum(x.data * x.data, axis=-1, keepdims=True))
    if np.any(n <= min_norm):
        from ..errors import DegenerateVector
        raise DegenerateVector("cannot normalize a (near-)zero vector")
    y = x.data / n

    def back(g):
        return ((g - y * np.sum(g * y, axis=-1, keepdims=True)) / n,)

    return _node(y, (x,), back)


def log_softmax(x, exclude=None):
    """Row-wise log-softmax of a 2-D tensor.

    Entries where ``exclude`` is true take no part in the normalizer; their
    output is 0 and they receive no gradient.
    """
    x = as_tensor(x)
    z = x.data
    if exclude is not None:
        z = np.where(exclude, -np.inf, z)
    m = np.max(z, axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    out = z - m - np.log(s)
    p = e / s
    if exclude is not None:
        out = np.where(exclude, 0.0, out)

    def back(g):
        if exclude is not None:
            g = np.where(exclude, 0.0, g)
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _node(out, (x,), back, dtype=x.dtype)


# --------------------------------------------------------------------------
# image ops (NHWC)

def _windows(xp, kh, kw, stride, ho, wo):
    n, _, _, c = xp.shape
    s0, s1, s2, s3 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, shape=(n, ho, wo, kh, kw, c),
        strides=(s0, s1 * stride, s2 * stride, s1, s2, s3), writeable=False)


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-D cross-correlation. x: (N, H, W, Cin); w: (kh, kw, Cin, Cout); b: (Cout,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeMismatch(f"conv2d input {x.shape} vs kernel {w.shape}")
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    cols = _windows(xp, kh, kw, stride, ho, wo).reshape(n * ho * wo, kh * kw * cin)
    wm = w.data.reshape(kh * kw * cin, cout)
    out = cols @ wm
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out += b.data
        parents.append(b)
    out = out.reshape(n, ho, wo, cout)

    def back(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wm.T).reshape(n, ho, wo, kh, kw, cin)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += gcols[:, :, :, i, j, :]
            gx = gxp[:, padding:padding + h, padding:padding + wd, :] if padding else gxp
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _node(out, parents, back)


def bilinear_matrix(n_out: int, n_in: int, dtype=np.float64) -> np.ndarray:
    """1-D linear interpolation weights, half-pixel (align-corners false) convention."""
    scale = n_in / n_out
    src = np.maximum((np.arange(n_out) + 0.5) * scale - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    lam = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - lam)
    np.add.at(m, (rows, i1), lam)
    return m.astype(dtype)


def upsample_bilinear(x, factor: int):
    """Bilinear upsampling of (N, h, w, C) by an integer factor."""
    x = as_tensor(x)
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return x
    n, h, w, c = x.shape
    ah = bilinear_matrix(h * factor, h, x.dtype)
    aw = bilinear_matrix(w * factor, w, x.dtype)
    hh, ww = h * factor, w * factor
    tmp = np.matmul(ah, x.data.reshape(n, h, w * c))  # (n, H, w*c)
    out = np.matmul(aw, tmp.reshape(n * hh, w, c)).reshape(n, hh, ww, c)

    def back(g):
        gt = np.matmul(aw.T, g.reshape(n * hh, ww, c)).reshape(n, hh, w * c)
        return (np.matmul(ah.T, gt).reshape(n, h, w, c),)

    return _node(out, (x,), back)
