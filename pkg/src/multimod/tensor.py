"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps an ndarray and, when gradients are enabled, remembers the
operation that produced it together with a closure implementing the local
vector-Jacobian product. backward() on a scalar replays those closures in
reverse topological order. The tape is rebuilt on every forward pass; there
is no graph caching.

Gradients of leaves that a loss never touches stay None (absent), they are
not materialized as zeros.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

from .errors import ConfigError, ContractError, NumericError, ShapeError

_grad_enabled = True

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (momentum/eval forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op", "_backward_ran")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None
        self._op = "leaf"
        self._backward_ran = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def assert_finite(self, what: str = "tensor"):
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"{what} contains NaN or Inf")
        return self

    # -- graph construction ---------------------------------------------------

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g)  # owned copy: closures may hand out views
        else:
            self.grad += g

    def backward(self):
        """Propagate d(self)/d(leaf) into .grad of every reachable requires_grad leaf.

        self must be scalar. Calling backward twice on the same node is an
        error; rebuild the graph (rerun the forward) instead.
        """
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.data.shape}")
        if self._backward_ran:
            raise ContractError("backward already ran on this node; rebuild the graph before differentiating again")
        if not np.all(np.isfinite(self.data)):
            raise NumericError("loss is NaN or Inf")
        self._backward_ran = True

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    # -- operator sugar --------------------------------------------------------

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
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents, op: str, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        out._op = op
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), "add", bwd)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), "sub", bwd)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), "mul", bwd)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), "div", bwd)


def power(a, p: float) -> Tensor:
    a = _lift(a)
    p = float(p)
    data = a.data**p

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1.0))

    return _make(data, (a,), f"pow{p}", bwd)


def exp(a) -> Tensor:
    a = _lift(a)
    data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * data)

    return _make(data, (a,), "exp", bwd)


def log(a) -> Tensor:
    a = _lift(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        data = np.log(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(data, (a,), "log", bwd)


def relu(a) -> Tensor:
    a = _lift(a)
    data = np.maximum(a.data, 0.0)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0.0))

    return _make(data, (a,), "relu", bwd)


def gelu(a) -> Tensor:
    """Exact-erf GELU: x * Phi(x)."""
    a = _lift(a)
    phi = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    data = a.data * phi

    def bwd(g):
        if a.requires_grad:
            pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
            a._accumulate(g * (phi + a.data * pdf))

    return _make(data, (a,), "gelu", bwd)


# -- shape manipulation ----------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _make(data, (a,), "reshape", bwd)


def transpose(a, axes=None) -> Tensor:
    a = _lift(a)
    data = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inv))

    return _make(data, (a,), "transpose", bwd)


def take(a, idx) -> Tensor:
    """Indexing/slicing. Integer-array indices gather rows (embedding lookups);
    the backward scatter-adds, so repeated indices accumulate."""
    a = _lift(a)
    data = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, g)
            a._accumulate(buf)

    return _make(np.array(data, dtype=np.float64), (a,), "take", bwd)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_lift(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p._accumulate(g[tuple(sl)])

    return _make(data, tuple(parts), "concat", bwd)


def stack(parts, axis: int = 0) -> Tensor:
    parts = [_lift(p) for p in parts]
    data = np.stack([p.data for p in parts], axis=axis)

    def bwd(g):
        slices = np.moveaxis(g, axis, 0)
        for p, gs in zip(parts, slices):
            if p.requires_grad:
                p._accumulate(gs)

    return _make(data, tuple(parts), "stack", bwd)


# -- reductions -------------------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

    return _make(np.asarray(data), (a,), "sum", bwd)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis, keepdims) * (1.0 / n)


# -- linear algebra ---------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul shapes incompatible: {a.data.shape} @ {b.data.shape}")
    data = np.matmul(a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), "matmul", bwd)


# -- softmax family ----------------------------------------------------------------


def softmax_lastdim(x, mask=None) -> Tensor:
    """Stable softmax over the last axis.

    mask, when given, is a boolean array broadcastable to x.shape with True
    marking admissible entries. Fully masked slices yield all-zero rows
    rather than NaN.
    """
    x = _lift(x)
    if np.any(np.isnan(x.data)):
        raise NumericError("softmax input contains NaN")
    if mask is None:
        shifted = x.data - x.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        denom = e.sum(axis=-1, keepdims=True)
        y = e / denom
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), x.data.shape)
        neg = np.where(m, x.data, -np.inf)
        rowmax = neg.max(axis=-1, keepdims=True)
        rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
        e = np.where(m, np.exp(neg - rowmax), 0.0)
        denom = e.sum(axis=-1, keepdims=True)
        y = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0.0)

    def bwd(g):
        if x.requires_grad:
            dot = (g * y).sum(axis=-1, keepdims=True)
            x._accumulate(y * (g - dot))

    return _make(y, (x,), "softmax", bwd)


def log_softmax_lastdim(x) -> Tensor:
    x = _lift(x)
    if np.any(np.isnan(x.data)):
        raise NumericError("log_softmax input contains NaN")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    data = shifted - lse
    sm = np.exp(data)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g - sm * g.sum(axis=-1, keepdims=True))

    return _make(data, (x,), "log_softmax", bwd)


# -- temporal convolution -------------------------------------------------------


def temporal_conv(x, kernel) -> Tensor:
    """Depthwise convolution along axis 0 with one shared odd-length kernel.

    out[t, ...] = sum_j kernel[j] * x[t + j - K//2, ...], zero padded, so the
    output keeps the input shape. Every trailing channel sees the same taps.
    """
    x, kernel = _lift(x), _lift(kernel)
    if kernel.data.ndim != 1:
        raise ShapeError(f"temporal kernel must be 1-D, got shape {kernel.data.shape}")
    K = kernel.data.shape[0]
    if K % 2 == 0:
        raise ConfigError(f"temporal kernel length must be odd, got {K}")
    half = K // 2
    T = x.data.shape[0]
    pad_spec = [(half, half)] + [(0, 0)] * (x.data.ndim - 1)
    xp = np.pad(x.data, pad_spec)
    data = np.zeros_like(x.data)
    for j in range(K):
        data += kernel.data[j] * xp[j : j + T]

    def bwd(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(K):
                gxp[j : j + T] += kernel.data[j] * g
            gx = gxp[half : half + T] if half else gxp
            x._accumulate(gx.copy())
        if kernel.requires_grad:
            gk = np.empty(K)
            for j in range(K):
                gk[j] = (g * xp[j : j + T]).sum()
            kernel._accumulate(gk)

    return _make(data, (x, kernel), "temporal_conv", bwd)


def grouped_temporal_conv(x, kernels) -> Tensor:
    """Temporal convolution along axis 0 where the channel axis (last) is cut
    into per-kernel groups: channels [g*cg, (g+1)*cg) convolve with kernel
    row g. Equivalent to running temporal_conv per group and concatenating.
    """
    x, kernels = _lift(x), _lift(kernels)
    if kernels.data.ndim != 2:
        raise ShapeError(f"grouped kernels must be (groups, K), got {kernels.data.shape}")
    G, K = kernels.data.shape
    if K % 2 == 0:
        raise ConfigError(f"temporal kernel length must be odd, got {K}")
    C = x.data.shape[-1]
    if C % G != 0:
        raise ShapeError(f"channel count {C} not divisible by {G} groups")
    cg = C // G
    half = K // 2
    Tn = x.data.shape[0]
    per_channel = np.repeat(kernels.data, cg, axis=0)  # (C, K)
    pad_spec = [(half, half)] + [(0, 0)] * (x.data.ndim - 1)
    xp = np.pad(x.data, pad_spec)
    data = np.zeros_like(x.data)
    for j in range(K):
        data += per_channel[:, j] * xp[j : j + Tn]

    def bwd(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(K):
                gxp[j : j + Tn] += per_channel[:, j] * g
            x._accumulate(gxp[half : half + Tn].copy() if half else gxp.copy())
        if kernels.requires_grad:
            gk_c = np.empty((C, K))
            for j in range(K):
                prod = g * xp[j : j + Tn]
                gk_c[:, j] = prod.reshape(-1, C).sum(axis=0)
            kernels._accumulate(gk_c.reshape(G, cg, K).sum(axis=1))

    return _make(data, (x, kernels), "grouped_temporal_conv", bwd)


# -- layer normalization ----------------------------------------------------------


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Per-last-dim-slice normalization followed by an affine map.

    Fused primitive; layer_norm_reference is the op-composed equivalent kept
    for cross-checking."""
    x, gamma, beta = _lift(x), _lift(gamma), _lift(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gamma.data + beta.data

    def bwd(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gh = g * gamma.data
            n = x.data.shape[-1]
            term = gh - gh.mean(axis=-1, keepdims=True) \
                - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * term)

    return _make(data, (x, gamma, beta), "layer_norm", bwd)


def layer_norm_reference(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Same map assembled from primitive ops (differentiation oracle)."""
    x = _lift(x)
    mu = tmean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = tmean(xc * xc, axis=-1, keepdims=True)
    inv = power(var + eps, -0.5)
    return xc * inv * gamma + beta


def zero_grad(params):
    """Clear gradients on an iterable (or name->Tensor mapping) of parameters."""
    if hasattr(params, "values"):
        params = params.values()
    for p in params:
        p.grad = None
