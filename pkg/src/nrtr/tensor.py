"""Dense tensors with define-by-run reverse-mode automatic differentiation.

Every operation that consumes a tensor with ``requires_grad`` records its
parents and a closure mapping the output gradient to parent gradients. The
graph is rebuilt on every forward pass; :func:`backward` walks it in exact
reverse construction order.
"""

from __future__ import annotations

import contextlib
import contextvars
import itertools
import math

import numpy as np

from . import kernels
from .errors import ConfigError, MaskError, ShapeError

DEFAULT_DTYPE = np.float32

_counter = itertools.count()
_grad_enabled = contextvars.ContextVar("grad_enabled", default=True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (thread/context local)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


class Tensor:
    """A numpy array plus optional participation in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._seq = next(_counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def backward(self):
        backward(self)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __neg__ = lambda self: scale(self, -1.0)
    __matmul__ = lambda self, other: matmul(self, other)


def parameter(data, name: str | None = None, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=True, name=name)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tape:
    """The nodes reachable from a root, in construction order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def collect(cls, root: Tensor) -> Tape:
        seen = {id(root)}
        stack = [root]
        nodes = []
        while stack:
            node = stack.pop()
            nodes.append(node)
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    seen.add(id(p))
                    stack.append(p)
        nodes.sort(key=lambda n: n._seq)
        return cls(nodes)

    def __len__(self):
        return len(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if not n._parents]


def backward(loss: Tensor, params=None) -> None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Gradients are assigned, not accumulated across calls. Tensors in
    ``params`` that are unreachable from ``loss`` receive zero gradients.
    """
    if loss.data.ndim != 0:
        raise ShapeError(f"backward requires a rank-0 loss, got shape {loss.shape}")
    if params is not None:
        for p in params:
            p.grad = np.zeros_like(p.data)
    if not loss.requires_grad:
        return
    tape = Tape.collect(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _node(ad * bd, (a, b), bw)


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return _node(x.data * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    return _node(np.where(keep, x.data, 0).astype(x.dtype), (x,), lambda g: (g * keep,))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None = None, training: bool = True) -> Tensor:
    """Inverted dropout; identity when ``training`` is false or ``rate`` is 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return _node(x.data * mask, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------- structural


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axis1: int = -2, axis2: int = -1) -> Tensor:
    return _node(np.swapaxes(x.data, axis1, axis2), (x,), lambda g: (np.swapaxes(g, axis1, axis2),))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def concat_last_axis(tensors) -> Tensor:
    return concat(tensors, axis=-1)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    src = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _node(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def embedding_lookup(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    n = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = ids[(ids < 0) | (ids >= n)]
        raise ShapeError(f"token id {int(bad.flat[0])} out of range for {n} embedding rows")

    def bw(g):
        dw = np.zeros_like(weight.data)
        np.add.at(dw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (dw,)

    return _node(weight.data[ids], (weight,), bw)


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, ad.shape),
            None if gb is None else _unbroadcast(gb, bd.shape),
        )

    try:
        out = ad @ bd
    except ValueError as exc:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}") from exc
    return _node(out, (a, b), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; ``-inf`` entries map to exactly 0."""
    m = np.max(x.data, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise MaskError("softmax slice has no finite entry (fully masked)")
    e = np.exp(x.data - m)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _node(y, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise the last axis to zero mean, unit population variance, then affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm params {gain.shape}/{bias.shape} do not match last axis {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + x.dtype.type(eps))
    xhat = xc * inv
    gd = gain.data

    def bw(g):
        ggain = (g * xhat).reshape(-1, d).sum(axis=0) if gain.requires_grad else None
        gbias = g.reshape(-1, d).sum(axis=0) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, ggain, gbias

    return _node(xhat * gd + bias.data, (x, gain, bias), bw)


def cross_entropy(logits: Tensor, targets, ignore_index: int = -1) -> Tensor:
    """Mean of ``-log softmax(logits)[target]`` over non-ignored positions."""
    t = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != t.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {t.shape}")
    n_cls = logits.shape[-1]
    flat = logits.data.reshape(-1, n_cls)
    tf = t.reshape(-1)
    valid = tf != ignore_index
    count = int(valid.sum())
    if count == 0:
        raise ShapeError("cross_entropy: every target is ignored")
    if tf[valid].min() < 0 or tf[valid].max() >= n_cls:
        raise ShapeError(f"cross_entropy: target out of range for {n_cls} classes")
    m = flat.max(axis=1, keepdims=True)
    z = flat - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    safe_t = np.where(valid, tf, 0)
    picked = logp[np.arange(tf.size), safe_t]
    loss = -(picked * valid).sum() / count

    def bw(g):
        p = np.exp(logp)
        p[np.arange(tf.size), safe_t] -= 1.0
        p *= (valid / count)[:, None]
        return ((p * g).reshape(logits.shape).astype(logits.dtype),)

    return _node(np.asarray(loss, dtype=logits.dtype), (logits,), bw)


# ---------------------------------------------------------------- convolution


def _same_padding(n: int, k: int, stride: int) -> tuple[int, int, int]:
    out = -(-n // stride)
    total = max((out - 1) * stride + k - n, 0)
    return out, total // 2, total - total // 2


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 2) -> Tensor:
    """Cross-correlation with zero "same" padding on channels-last input.

    ``x`` is ``[B, H, W, C_in]`` (or ``[H, W, C_in]``), ``kernel`` is
    ``[kh, kw, C_in, C_out]``; output extents are ``ceil(H/stride)``,
    ``ceil(W/stride)``.
    """
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    kh, kw, cin, cout = kernel.shape
    if xd.ndim != 4 or xd.shape[-1] != cin:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {kernel.shape}")
    b, h, w, _ = xd.shape
    ho, pt, pb = _same_padding(h, kh, stride)
    wo, pl, pr = _same_padding(w, kw, stride)
    xp = np.pad(xd, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    cols = kernels.im2col(xp, kh, kw, stride, ho, wo)
    k2 = kernel.data.reshape(kh * kw * cin, cout)
    out = cols.reshape(-1, kh * kw * cin) @ k2
    if bias is not None:
        out += bias.data
    out = out.reshape(b, ho, wo, cout)
    hp, wp = xp.shape[1], xp.shape[2]

    def bw(g):
        g2 = g.reshape(-1, cout)
        gk = (cols.reshape(-1, kh * kw * cin).T @ g2).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ k2.T).reshape(b, ho, wo, kh, kw, cin)
            gxp = kernels.col2im(gcols, hp, wp, stride)
            gx = gxp[:, pt:pt + h, pl:pl + w, :]
            gx = gx[0] if squeeze else gx
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return (gx, gk, gb) if bias is not None else (gx, gk)

    parents = (x, kernel, bias) if bias is not None else (x, kernel)
    return _node(out[0] if squeeze else out, parents, bw)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
