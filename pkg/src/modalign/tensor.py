"""Dense tensors with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (float32 by default; float64 is used by the
finite-difference verification mode) and record a computation graph as they
go. Calling ``backward()`` on a scalar populates ``grad`` on every reachable
tensor with ``requires_grad`` set.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf as _erf

from . import kernels
from .errors import ContractError, ParameterError, ShapeError

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else np.float32)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @classmethod
    def _from_op(cls, data, parents, backward, op):
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t.requires_grad = any(p.requires_grad for p in parents)
        t._parents = tuple(parents) if t.requires_grad else ()
        t._backward = backward if t.requires_grad else None
        t.op = op
        return t

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    # -- autodiff -----------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into .grad over the whole graph."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar, got shape {self.shape}")
        topo, seen = [], set()

        def visit(t):
            stack = [(t, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    topo.append(node)
                    continue
                if id(node) in seen:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for p in node._parents:
                    if id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if not parent.requires_grad:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other), dtype=self.data.dtype)

    def __add__(self, other):
        other = self._coerce(other)
        out = self.data + other.data

        def bw(g):
            return ((self, _unbroadcast(g, self.shape)),
                    (other, _unbroadcast(g, other.shape)))
        return Tensor._from_op(out, (self, other), bw, "add")

    __radd__ = __add__

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), lambda g: ((self, -g),), "neg")

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        out = self.data * other.data

        def bw(g):
            return ((self, _unbroadcast(g * other.data, self.shape)),
                    (other, _unbroadcast(g * self.data, other.shape)))
        return Tensor._from_op(out, (self, other), bw, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        out = self.data / other.data

        def bw(g):
            return ((self, _unbroadcast(g / other.data, self.shape)),
                    (other, _unbroadcast(-g * self.data / (other.data ** 2), other.shape)))
        return Tensor._from_op(out, (self, other), bw, "div")

    def __pow__(self, p):
        p = float(p)
        out = self.data ** p

        def bw(g):
            return ((self, g * p * self.data ** (p - 1)),)
        return Tensor._from_op(out, (self,), bw, "pow")

    def matmul(self, other):
        other = self._coerce(other)
        if self.data.ndim != 2 or other.data.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul shapes incompatible: {self.shape} x {other.shape}")
        out = self.data @ other.data

        def bw(g):
            return ((self, g @ other.data.T), (other, self.data.T @ g))
        return Tensor._from_op(out, (self, other), bw, "matmul")

    __matmul__ = matmul

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return ((self, np.broadcast_to(g, self.shape).astype(self.data.dtype)),)
        return Tensor._from_op(np.asarray(out, dtype=self.data.dtype), (self,), bw, "sum")

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def max(self, axis=None, keepdims=False):
        out = self.data.max(axis=axis, keepdims=keepdims)

        def bw(g):
            g = np.asarray(g)
            full = self.data.max(axis=axis, keepdims=True)
            mask = (self.data == full)
            mask = mask / mask.sum(axis=axis, keepdims=True)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return ((self, (mask * g).astype(self.data.dtype)),)
        return Tensor._from_op(np.asarray(out, dtype=self.data.dtype), (self,), bw, "max")

    # -- elementwise maps ---------------------------------------------------

    def exp(self):
        out = np.exp(self.data)

        def bw(g):
            return ((self, g * out),)
        return Tensor._from_op(out, (self,), bw, "exp")

    def log(self):
        out = np.log(self.data)

        def bw(g):
            return ((self, g / self.data),)
        return Tensor._from_op(out, (self,), bw, "log")

    def sqrt(self):
        out = np.sqrt(self.data)

        def bw(g):
            return ((self, g * 0.5 / out),)
        return Tensor._from_op(out, (self,), bw, "sqrt")

    def relu(self):
        out = np.maximum(self.data, 0)

        def bw(g):
            return ((self, g * (self.data > 0)),)
        return Tensor._from_op(out, (self,), bw, "relu")

    def sigmoid(self):
        # evaluate exp only on the negative side so large |x| cannot overflow
        x = self.data
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)

        def bw(g):
            return ((self, g * out * (1.0 - out)),)
        return Tensor._from_op(out.astype(self.data.dtype), (self,), bw, "sigmoid")

    def gelu(self):
        """Exact Gaussian-CDF GELU: x * Phi(x)."""
        x = self.data
        phi = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
        out = x * phi

        def bw(g):
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
            return ((self, (g * (phi + x * pdf)).astype(x.dtype)),)
        return Tensor._from_op(out.astype(x.dtype), (self,), bw, "gelu")

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = self.data.reshape(shape)

        def bw(g):
            return ((self, g.reshape(self.shape)),)
        return Tensor._from_op(out, (self,), bw, "reshape")

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        inv = np.argsort(axes)
        out = self.data.transpose(axes)

        def bw(g):
            return ((self, g.transpose(inv)),)
        return Tensor._from_op(out, (self,), bw, "transpose")

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        out = self.data[idx]

        def bw(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            return ((self, full),)
        return Tensor._from_op(out, (self,), bw, "slice")


# -- free functions ----------------------------------------------------------

def concat(tensors, axis=0):
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        parts = np.split(g, splits, axis=axis)
        return tuple(zip(tensors, parts))
    return Tensor._from_op(out, tensors, bw, "concat")


def stack(tensors, axis=0):
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        parts = np.split(g, len(tensors), axis=axis)
        return tuple((t, p.squeeze(axis)) for t, p in zip(tensors, parts))
    return Tensor._from_op(out, tensors, bw, "stack")


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise nonlinearity; kind in {gelu, relu, sigmoid}."""
    try:
        return {"gelu": x.gelu, "relu": x.relu, "sigmoid": x.sigmoid}[kind]()
    except KeyError:
        raise ParameterError(f"unknown activation kind: {kind!r}") from None


def dense_forward(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b for x[B,I], w[I,O], b[O]."""
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not match weight {w.shape}")
    return x.matmul(w) + b


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return x * Tensor(mask, dtype=x.data.dtype)


def _pad_amount(mode, kh, kw):
    if mode == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ParameterError("'same' padding needs odd kernel extents")
        return (kh - 1) // 2, (kw - 1) // 2
    if mode == "valid":
        return 0, 0
    if isinstance(mode, tuple):
        return mode
    raise ParameterError(f"unknown padding mode: {mode!r}")


def conv2d_forward(x: Tensor, k: Tensor, padding="same") -> Tensor:
    """Stride-1 cross-correlation of x[B,C,H,W] with k[O,C,kh,kw]."""
    if x.data.ndim != 4 or k.data.ndim != 4 or x.shape[1] != k.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} does not match kernel {k.shape}")
    _, _, h, w = x.shape
    _, _, kh, kw = k.shape
    ph, pw = _pad_amount(padding, kh, kw)
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ShapeError(
            f"conv2d: kernel {k.shape} larger than padded input {x.shape} (pad {ph},{pw})")
    xd = np.ascontiguousarray(x.data)
    kd = np.ascontiguousarray(k.data)
    out = kernels.conv2d_forward(xd, kd, ph, pw)

    def bw(g):
        g = np.ascontiguousarray(g)
        gx = kernels.conv2d_grad_input(g, kd, ph, pw, h, w)
        gk = kernels.conv2d_grad_kernel(g, xd, kh, kw, ph, pw)
        return ((x, np.asarray(gx)), (k, np.asarray(gk)))
    return Tensor._from_op(np.asarray(out), (x, k), bw, "conv2d")


def conv_transpose2d(x: Tensor, k: Tensor, padding="same") -> Tensor:
    """Stride-1 transposed convolution: the adjoint of conv2d_forward.

    k has layout [I, O, kh, kw] where I is the input channel count of x;
    with 'same' padding the spatial extent is preserved.
    """
    if x.shape[1] != k.shape[0]:
        raise ShapeError(f"conv_transpose2d: input {x.shape} does not match kernel {k.shape}")
    _, _, h, w = x.shape
    _, _, kh, kw = k.shape
    ph, pw = _pad_amount(padding, kh, kw)
    oh = h + kh - 1 - 2 * ph
    ow = w + kw - 1 - 2 * pw
    xd = np.ascontiguousarray(x.data)
    kd = np.ascontiguousarray(k.data)
    out = kernels.conv2d_grad_input(xd, kd, ph, pw, oh, ow)

    def bw(g):
        g = np.ascontiguousarray(g)
        gx = kernels.conv2d_forward(g, kd, ph, pw)
        gk = kernels.conv2d_grad_kernel(xd, g, kh, kw, ph, pw)
        return ((x, np.asarray(gx)), (k, np.asarray(gk)))
    return Tensor._from_op(np.asarray(out), (x, k), bw, "conv_transpose2d")


def maxpool2d(x: Tensor, pool_h: int, pool_w: int) -> Tensor:
    """Non-overlapping max pool with ceil-mode edge handling.

    Partial windows at the bottom/right edges are pooled over the cells that
    exist, so output extents are ceil(H/pool_h) x ceil(W/pool_w).
    """
    b, c, h, w = x.shape
    oh = -(-h // pool_h)
    ow = -(-w // pool_w)
    ph, pw = oh * pool_h - h, ow * pool_w - w
    neg = np.finfo(x.data.dtype).min
    xp = np.pad(x.data, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=neg)
    view = xp.reshape(b, c, oh, pool_h, ow, pool_w)
    out = view.max(axis=(3, 5))

    def bw(g):
        full = view.max(axis=(3, 5), keepdims=True)
        mask = (view == full)
        mask = mask / mask.sum(axis=(3, 5), keepdims=True)
        gp = (mask * g.reshape(b, c, oh, 1, ow, 1)).reshape(b, c, oh * pool_h, ow * pool_w)
        return ((x, gp[:, :, :h, :w].astype(x.data.dtype)),)
    return Tensor._from_op(out, (x,), bw, "maxpool2d")


def upsample_time2(x: Tensor) -> Tensor:
    """Nearest-neighbor x2 upsampling along the last (time) axis."""
    out = np.repeat(x.data, 2, axis=-1)

    def bw(g):
        shp = g.shape[:-1] + (g.shape[-1] // 2, 2)
        return ((x, g.reshape(shp).sum(axis=-1)),)
    return Tensor._from_op(out, (x,), bw, "upsample_time2")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shift = x - Tensor(x.data.max(axis=axis, keepdims=True), dtype=x.data.dtype)
    return shift - shift.exp().sum(axis=axis, keepdims=True).log()


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Rows scaled to unit norm; zero rows stay zero (norm clamped by eps)."""
    norm = ((x * x).sum(axis=axis, keepdims=True) + eps).sqrt()
    return x / norm
