"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

The computation graph is recorded implicitly through ``Tensor.parents``;
``backward`` replays it in exact reverse topological order, which makes
repeated runs on the same inputs bit-identical.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DefinitenessError, ShapeError

_default_dtype = np.float64


def set_default_dtype(dtype):
    """Set the dtype used for newly created tensors (float32 or float64)."""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"unsupported dtype {dtype}")
    _default_dtype = dtype.type


def get_default_dtype():
    return _default_dtype


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy trailing-dimension broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the reverse-mode graph.

    `data` and `grad` always share one shape; `grad` is all-zero until a
    backward pass touches this node.
    """

    __slots__ = ("data", "grad", "parents", "_backward", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=True,
                 dtype=None):
        self.data = np.asarray(data, dtype=dtype or _default_dtype)
        self.grad = np.zeros_like(self.data)
        self.parents = tuple(parents)
        self._backward = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, leaf={self._backward is None})"

    # -- graph traversal -----------------------------------------------------

    def _topo(self):
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))
        return order

    def backward(self):
        """Populate gradient slots of every ancestor of this scalar node."""
        if self.data.shape != ():
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.shape}")
        order = self._topo()
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------------

    def _binary(self, other, forward, back_a, back_b):
        other = other if isinstance(other, Tensor) else Tensor(
            other, requires_grad=False, dtype=self.data.dtype)
        try:
            out_data = forward(self.data, other.data)
        except ValueError:
            raise ShapeError(
                f"shapes {self.shape} and {other.shape} are not broadcast-compatible")
        out = Tensor(out_data, parents=(self, other))

        def bw(g):
            self.grad += _unbroadcast(back_a(g, self.data, other.data), self.shape)
            other.grad += _unbroadcast(back_b(g, self.data, other.data), other.shape)
        out._backward = bw
        return out

    def __add__(self, other):
        return self._binary(other, np.add,
                            lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract,
                            lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        return self._binary(other, np.multiply,
                            lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, np.divide,
                            lambda g, a, b: g / b,
                            lambda g, a, b: -g * a / (b * b))

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,))

        def bw(g):
            self.grad += -g
        out._backward = bw
        return out

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise ContractError("pow supports scalar exponents only")
        out = Tensor(self.data ** exponent, parents=(self,))

        def bw(g):
            self.grad += g * exponent * self.data ** (exponent - 1)
        out._backward = bw
        return out

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(other, requires_grad=False, dtype=self.data.dtype)
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ShapeError(
                f"matmul needs [m,k]@[k,n], got {self.shape} @ {other.shape}")
        out = Tensor(self.data @ other.data, parents=(self, other))

        def bw(g):
            self.grad += g @ other.data.T
            other.grad += self.data.T @ g
        out._backward = bw
        return out

    # -- shaping -------------------------------------------------------------

    @property
    def T(self):
        out = Tensor(self.data.T, parents=(self,))

        def bw(g):
            self.grad += g.T
        out._backward = bw
        return out

    def reshape(self, *shape):
        orig = self.shape
        out = Tensor(self.data.reshape(*shape), parents=(self,))

        def bw(g):
            self.grad += g.reshape(orig)
        out._backward = bw
        return out

    def gather_columns(self, idx):
        """Select columns of a 2-D tensor; the adjoint scatter-adds them back."""
        if self.ndim != 2:
            raise ShapeError(f"gather_columns needs a matrix, got {self.shape}")
        idx = np.asarray(idx, dtype=np.intp)
        out = Tensor(self.data[:, idx], parents=(self,))

        def bw(g):
            np.add.at(self.grad, (slice(None), idx), g)
        out._backward = bw
        return out

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,))

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self.grad += np.broadcast_to(g, self.shape)
        out._backward = bw
        return out

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- elementwise nonlinearities ------------------------------------------

    def _unary(self, out_data, grad_fn):
        out = Tensor(out_data, parents=(self,))

        def bw(g):
            self.grad += grad_fn(g, out.data)
        out._backward = bw
        return out

    def log(self):
        return self._unary(np.log(self.data), lambda g, y: g / self.data)

    def exp(self):
        return self._unary(np.exp(self.data), lambda g, y: g * y)

    def tanh(self):
        return self._unary(np.tanh(self.data), lambda g, y: g * (1.0 - y * y))

    def sigmoid(self):
        y = 1.0 / (1.0 + np.exp(-self.data))
        return self._unary(y, lambda g, y: g * y * (1.0 - y))

    def relu(self):
        return self._unary(np.maximum(self.data, 0.0),
                           lambda g, y: g * (self.data > 0))

    def lrelu(self, slope=0.2):
        y = np.where(self.data > 0, self.data, slope * self.data)
        return self._unary(y, lambda g, y: g * np.where(self.data > 0, 1.0, slope))

    def softmax(self, axis=-1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)
        out = Tensor(y, parents=(self,))

        def bw(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            self.grad += y * (g - dot)
        out._backward = bw
        return out


def constant(data, dtype=None):
    """A leaf that records no gradient of interest (still shape-checked)."""
    return Tensor(data, requires_grad=False, dtype=dtype)


def logdet_psd(m: Tensor) -> Tensor:
    """Log-determinant of a symmetric positive definite matrix.

    The input is symmetrized as (M + M^T)/2 before Cholesky factorization.
    The adjoint is the (symmetrized) matrix inverse scaled by the upstream
    gradient; the explicit inverse is acceptable at the matrix sizes used here.
    """
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"logdet_psd needs a square matrix, got {m.shape}")
    sym = 0.5 * (m.data + m.data.T)
    try:
        chol = np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        raise DefinitenessError(_failing_pivot(sym))
    out = Tensor(2.0 * np.sum(np.log(np.diag(chol))), parents=(m,))

    def bw(g):
        inv = np.linalg.inv(sym)
        m.grad += g * 0.5 * (inv + inv.T)
    out._backward = bw
    return out


def _failing_pivot(sym):
    """Index of the first non-positive Cholesky pivot of a symmetric matrix."""
    d = sym.shape[0]
    a = sym.copy()
    for j in range(d):
        pivot = a[j, j] - np.dot(a[j, :j], a[j, :j])
        if pivot <= 0 or not np.isfinite(pivot):
            return j
        a[j, j] = np.sqrt(pivot)
        if j + 1 < d:
            a[j + 1:, j] = (a[j + 1:, j] - a[j + 1:, :j] @ a[j, :j]) / a[j, j]
    return d - 1


# -- convolution primitives (stride-2 capable, im2col based) ------------------

def _im2col(x, kh, kw, stride, pad):
    n, h, w, c = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    oh = (x.shape[1] - kh) // stride + 1
    ow = (x.shape[2] - kw) // stride + 1
    cols = np.empty((n, oh, ow, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = x[:, i:i + stride * oh:stride,
                                       j:j + stride * ow:stride, :]
    return cols.reshape(n * oh * ow, kh * kw * c), (n, oh, ow)


def _col2im(cols, x_shape, kh, kw, stride, pad):
    n, h, w, c = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    cols = cols.reshape(n, oh, ow, kh, kw, c)
    x = np.zeros((n, hp, wp, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            x[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += \
                cols[:, :, :, i, j, :]
    if pad:
        x = x[:, pad:hp - pad, pad:wp - pad, :]
    return x


def conv2d(x: Tensor, w: Tensor, stride=2, pad=1) -> Tensor:
    """2-D convolution; x is [N,H,W,Cin], w is [kh,kw,Cin,Cout]."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d shapes {x.shape} and {w.shape} do not match")
    kh, kw, cin, cout = w.shape
    cols, (n, oh, ow) = _im2col(x.data, kh, kw, stride, pad)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = Tensor((cols @ wmat).reshape(n, oh, ow, cout), parents=(x, w))

    def bw(g):
        gmat = g.reshape(n * oh * ow, cout)
        x.grad += _col2im(gmat @ wmat.T, x.shape, kh, kw, stride, pad)
        w.grad += (cols.T @ gmat).reshape(w.shape)
    out._backward = bw
    return out


def conv2d_transpose(x: Tensor, w: Tensor, stride=2, pad=1,
                     out_hw=None) -> Tensor:
    """Transposed convolution: the adjoint of conv2d with the same w/stride/pad.

    x is [N,h,w,Cout]; output is [N,H,W,Cin] with H,W defaulting to stride*h.
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[3]:
        raise ShapeError(f"conv2d_transpose shapes {x.shape} and {w.shape}")
    kh, kw, cin, cout = w.shape
    n, h, ww_ = x.shape[0], x.shape[1], x.shape[2]
    if out_hw is None:
        out_hw = (stride * h, stride * ww_)
    out_shape = (n, out_hw[0], out_hw[1], cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    xmat = x.data.reshape(n * h * ww_, cout)
    out = Tensor(_col2im(xmat @ wmat.T, out_shape, kh, kw, stride, pad),
                 parents=(x, w))

    def bw(g):
        cols, _ = _im2col(g, kh, kw, stride, pad)
        x.grad += (cols @ wmat).reshape(x.shape)
        w.grad += (cols.T @ xmat).reshape(w.shape)
    out._backward = bw
    return out
