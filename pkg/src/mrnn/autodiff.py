"""Minimal reverse-mode differentiable array engine.

Provides exactly the primitives the ranking network needs: same-length 1d
convolution, masked batch normalization, PReLU, centered max pooling, a
learnable scale unit, masked softmax, affine maps, channel concatenation,
block blending and the usual arithmetic glue. Values are float64
throughout; every node creation rejects NaN/Inf.

The computation graph is held implicitly: each :class:`Array` produced by
an operation records its parent nodes and a closure that scatters the
upstream gradient to them. ``backward`` walks the nodes reachable from
the loss in reverse topological order, so every input is finalized before
its consumers and gradients accumulate by summation over all paths.

Hot kernels (convolution, pooling) dispatch through :mod:`mrnn.backend`,
which selects numba-jitted or pure-numpy implementations via the
``MRNN_BACKEND`` environment variable.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from mrnn import backend


class ShapeError(ValueError):
    """Operand shapes disagree with the operation's contract."""


class ConfigError(ValueError):
    """Structurally invalid configuration (even window, bad margin, ...)."""


class DomainError(ValueError):
    """Input outside the operation's domain (all-masked softmax, ...)."""


class StateError(RuntimeError):
    """Stateful operation used before its state exists (eval-mode BN)."""


class NonFiniteError(ValueError):
    """A node would hold NaN or Inf."""


class GraphError(RuntimeError):
    """Backward invoked incorrectly (non-scalar loss)."""


# per-thread so concurrent scoring never disables recording elsewhere
_tape = threading.local()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (scoring / evaluation)."""
    prev = grad_enabled()
    _tape.enabled = False
    try:
        yield
    finally:
        _tape.enabled = prev


def grad_enabled() -> bool:
    return getattr(_tape, "enabled", True)


class Array:
    """A float64 ndarray node in the computation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("array creation rejected: non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad) and grad_enabled()
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def sum(self, axis=None) -> "Array":
        return sum_reduce(self, axis=axis)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Array(shape={self.data.shape}, op={self._op}, grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(as_array(other), -1.0))

    def __rsub__(self, other):
        return add(as_array(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_array(x, requires_grad: bool = False) -> Array:
    return x if isinstance(x, Array) else Array(x, requires_grad=requires_grad)


def parameter(data) -> Array:
    return Array(data, requires_grad=True)


def grad_of(arr: Array) -> np.ndarray:
    """Gradient of ``arr`` after a backward pass; zeros if no path reached it."""
    return arr.grad if arr.grad is not None else np.zeros_like(arr.data)


def zero_grads(params: Iterable[Array]) -> None:
    for p in params:
        p.grad = None


def _node(data: np.ndarray, parents: Sequence[Array], bwd, op: str) -> Array:
    out = Array(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = bwd
        out._op = op
    return out


def _accum(p: Array, g: np.ndarray) -> None:
    if p.requires_grad:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        p.grad += g


def backward(loss: Array) -> None:
    """Accumulate gradients of ``loss`` into every reachable parameter.

    The loss must be scalar. Nodes with no path to the loss are never
    visited; their gradient stays None (read as exactly zero).
    """
    if loss.data.ndim != 0:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    topo: list[Array] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Array:
    a, b = as_array(a), as_array(b)
    data = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _node(data, (a, b), bwd, "add")


def mul(a, b) -> Array:
    a, b = as_array(a), as_array(b)
    data = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), bwd, "mul")


def relu(x: Array) -> Array:
    """max(x, 0) with subgradient 0 at the kink."""
    x = as_array(x)
    pos = x.data > 0.0

    def bwd(g):
        _accum(x, g * pos)

    return _node(np.where(pos, x.data, 0.0), (x,), bwd, "relu")


def matmul(a: Array, b: Array) -> Array:
    a, b = as_array(a), as_array(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.data.shape} @ {b.data.shape}")

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), bwd, "matmul")


def transpose(x: Array) -> Array:
    x = as_array(x)
    if x.data.ndim != 2:
        raise ShapeError("transpose expects a 2-d array")

    def bwd(g):
        _accum(x, np.ascontiguousarray(g.T))

    return _node(np.ascontiguousarray(x.data.T), (x,), bwd, "transpose")


def reshape(x: Array, shape) -> Array:
    x = as_array(x)
    old = x.data.shape

    def bwd(g):
        _accum(x, g.reshape(old))

    return _node(x.data.reshape(shape).copy(), (x,), bwd, "reshape")


def sum_reduce(x: Array, axis: Optional[int] = None) -> Array:
    x = as_array(x)

    def bwd(g):
        if axis is None:
            _accum(x, np.full_like(x.data, float(g)))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy())

    return _node(x.data.sum(axis=axis), (x,), bwd, "sum_reduce")


def concat_channels(*xs: Array) -> Array:
    """Stack inputs along the channel (last) axis, argument order preserved."""
    if not xs:
        raise ShapeError("concat_channels needs at least one input")
    arrs = [as_array(x) for x in xs]
    lead = arrs[0].data.shape[:-1]
    for a in arrs[1:]:
        if a.data.shape[:-1] != lead:
            raise ShapeError("concat_channels: non-channel extents differ")
    sizes = [a.data.shape[-1] for a in arrs]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        for a, lo, hi in zip(arrs, bounds[:-1], bounds[1:]):
            _accum(a, g[..., lo:hi])

    return _node(np.concatenate([a.data for a in arrs], axis=-1), arrs, bwd, "concat_channels")


def stack_maps(maps: Sequence[Array]) -> Array:
    """Stack N equally shaped (h, s) maps into an (N, h, s) tensor."""
    arrs = [as_array(m) for m in maps]
    shape0 = arrs[0].data.shape
    for a in arrs[1:]:
        if a.data.shape != shape0:
            raise ShapeError("stack_maps: all maps must share one shape")

    def bwd(g):
        for n, a in enumerate(arrs):
            _accum(a, g[n])

    return _node(np.stack([a.data for a in arrs]), arrs, bwd, "stack_maps")


def dot(u: Array, v: Array) -> Array:
    u, v = as_array(u), as_array(v)
    if u.data.ndim != 1 or u.data.shape != v.data.shape:
        raise ShapeError(f"dot: {u.data.shape} . {v.data.shape}")

    def bwd(g):
        _accum(u, g * v.data)
        _accum(v, g * u.data)

    return _node(np.dot(u.data, v.data), (u, v), bwd, "dot")


def euclidean_distance(u: Array, v: Array) -> Array:
    """Row-wise L2 distance over the last axis; subgradient 0 at u == v."""
    u, v = as_array(u), as_array(v)
    if u.data.shape != v.data.shape:
        raise ShapeError(f"euclidean_distance: {u.data.shape} vs {v.data.shape}")
    diff = u.data - v.data
    d = np.sqrt((diff * diff).sum(axis=-1))

    def bwd(g):
        safe = np.where(d > 0.0, d, 1.0)
        scale = np.where(d > 0.0, np.asarray(g) / safe, 0.0)
        gu = scale[..., None] * diff
        _accum(u, gu)
        _accum(v, -gu)

    return _node(d, (u, v), bwd, "euclidean_distance")


def affine(x: Array, weights: Array, bias: Array) -> Array:
    """x @ weights + bias over the last axis; leading axes are batch."""
    x, weights, bias = as_array(x), as_array(weights), as_array(bias)
    a, b = weights.data.shape
    if x.data.shape[-1] != a or bias.data.shape != (b,):
        raise ShapeError(
            f"affine: input {x.data.shape}, weights {weights.data.shape}, bias {bias.data.shape}"
        )

    def bwd(g):
        g2 = g.reshape(-1, b)
        x2 = x.data.reshape(-1, a)
        _accum(x, (g2 @ weights.data.T).reshape(x.data.shape))
        _accum(weights, x2.T @ g2)
        _accum(bias, g2.sum(axis=0))

    return _node(x.data @ weights.data + bias.data, (x, weights, bias), bwd, "affine")


def prelu(x: Array, slopes: Array) -> Array:
    """Per-channel PReLU over the last axis; learnable slopes."""
    x, slopes = as_array(x), as_array(slopes)
    c = x.data.shape[-1]
    if slopes.data.shape != (c,):
        raise ShapeError(f"prelu: slopes {slopes.data.shape} for {c} channels")
    neg = x.data < 0.0
    data = np.where(neg, slopes.data * x.data, x.data)

    def bwd(g):
        _accum(x, g * np.where(neg, slopes.data, 1.0))
        gs = np.where(neg, g * x.data, 0.0)
        _accum(slopes, gs.reshape(-1, c).sum(axis=0))

    return _node(data, (x, slopes), bwd, "prelu")


def scale_unit(x: Array, sc: Array) -> Array:
    """Multiply every element by the learnable scalar ``sc``."""
    x, sc = as_array(x), as_array(sc)
    if sc.data.ndim != 0:
        raise ShapeError("scale_unit: sc must be a scalar")

    def bwd(g):
        _accum(x, g * sc.data)
        _accum(sc, np.asarray((g * x.data).sum()))

    return _node(x.data * sc.data, (x, sc), bwd, "scale_unit")


def softmax_masked(scores: Array, mask: Optional[np.ndarray] = None) -> Array:
    """Stable softmax over the last axis; masked positions get exactly 0.

    ``mask`` is a boolean array broadcastable to ``scores`` (True = valid).
    Raises DomainError when a row has no valid position.
    """
    scores = as_array(scores)
    z = scores.data
    if mask is None:
        valid = np.ones_like(z, dtype=bool)
    else:
        valid = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
    if not valid.any(axis=-1).all():
        raise DomainError("softmax_masked: a row has every position masked")
    shifted = np.where(valid, z, -np.inf)
    m = shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted - m)
    w = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        inner = (g * w).sum(axis=-1, keepdims=True)
        _accum(scores, w * (g - inner))

    return _node(w, (scores,), bwd, "softmax_masked")


def conv1d_same(x: Array, kernels: Array, bias: Array) -> Array:
    """Length-preserving 1d convolution with zero padding.

    x: (h, c_in), kernels: (c_out, win, c_in) with odd win, bias: (c_out,).
    """
    x, kernels, bias = as_array(x), as_array(kernels), as_array(bias)
    if kernels.data.ndim != 3:
        raise ShapeError(f"conv1d_same: kernels must be (c_out, win, c_in), got {kernels.data.shape}")
    c_out, win, c_in = kernels.data.shape
    if win % 2 == 0:
        raise ConfigError(f"conv1d_same: window must be odd, got {win}")
    if x.data.ndim != 2 or x.data.shape[1] != c_in:
        raise ShapeError(f"conv1d_same: input {x.data.shape} vs kernel c_in {c_in}")
    if bias.data.shape != (c_out,):
        raise ShapeError(f"conv1d_same: bias {bias.data.shape} vs c_out {c_out}")

    def bwd(g):
        gx, gk, gb = backend.conv1d_bwd(x.data, kernels.data, g)
        _accum(x, gx)
        _accum(kernels, gk)
        _accum(bias, gb)

    return _node(backend.conv1d_fwd(x.data, kernels.data, bias.data), (x, kernels, bias), bwd, "conv1d_same")


def pool_same(x: Array, width: int) -> Array:
    """Centered max pool over ``width`` valid positions, length preserved.

    Sequence-edge padding is conceptually -inf: the window clips to the
    sequence, so padding never wins. width == 1 is the identity.
    """
    x = as_array(x)
    if width % 2 == 0 or width < 1:
        raise ConfigError(f"pool_same: width must be odd and positive, got {width}")
    if x.data.ndim != 2:
        raise ShapeError("pool_same expects an (h, c) matrix")
    y, idx = backend.pool_max_fwd(x.data, width)
    h = x.data.shape[0]

    def bwd(g):
        _accum(x, backend.pool_max_bwd(g, idx, h))

    return _node(y, (x,), bwd, "pool_same")


def blend_blocks(g_tensor: Array, weights: Array) -> Array:
    """Per-position convex blend of block features.

    g_tensor: (N, h, s), weights: (h, N) -> (h, s) with
    out[i] = sum_n weights[i, n] * g_tensor[n, i].
    """
    g_tensor, weights = as_array(g_tensor), as_array(weights)
    if g_tensor.data.ndim != 3 or weights.data.ndim != 2:
        raise ShapeError("blend_blocks: expects (N, h, s) tensor and (h, N) weights")
    n, h, _ = g_tensor.data.shape
    if weights.data.shape != (h, n):
        raise ShapeError(f"blend_blocks: weights {weights.data.shape} vs maps {g_tensor.data.shape}")
    data = np.einsum("nhs,hn->hs", g_tensor.data, weights.data)

    def bwd(g):
        _accum(g_tensor, np.einsum("hs,hn->nhs", g, weights.data))
        _accum(weights, np.einsum("hs,nhs->hn", g, g_tensor.data))

    return _node(data, (g_tensor, weights), bwd, "blend_blocks")


class BatchNormState:
    """Running per-channel statistics for batch normalization."""

    __slots__ = ("mean", "var", "initialized", "momentum", "eps")

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.initialized = False
        self.momentum = momentum
        self.eps = eps


def batch_norm(
    x: Array,
    gamma: Array,
    beta: Array,
    state: BatchNormState,
    mode: str = "train",
    mask: Optional[np.ndarray] = None,
    update_running: bool = True,
) -> Array:
    """Per-channel normalization over the valid (batch, position) cells.

    x is (h, c) or (batch, h, c); ``mask`` flags valid positions ((h,) or
    (batch, h)). Train mode normalizes with batch statistics and, when
    ``update_running`` is set, folds them into the running averages.
    Eval mode uses the stored running statistics only.
    """
    x, gamma, beta = as_array(x), as_array(gamma), as_array(beta)
    squeeze = x.data.ndim == 2
    xv = x.data[None] if squeeze else x.data
    if xv.ndim != 3:
        raise ShapeError(f"batch_norm: input must be (h, c) or (b, h, c), got {x.data.shape}")
    b, h, c = xv.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError("batch_norm: gamma/beta must have one entry per channel")
    if mode not in ("train", "eval"):
        raise ConfigError(f"batch_norm: unknown mode {mode!r}")
    if mask is None:
        valid = np.ones((b, h), dtype=bool)
    else:
        valid = np.asarray(mask, dtype=bool)
        if valid.ndim == 1:
            valid = valid[None]
        if valid.shape != (b, h):
            raise ShapeError(f"batch_norm: mask {valid.shape} vs positions ({b}, {h})")
    m = int(valid.sum())

    if mode == "train":
        if m < 1:
            raise DomainError("batch_norm: train mode needs at least one valid position")
        cells = xv[valid]
        mu = cells.mean(axis=0)
        var = cells.var(axis=0)
        if update_running:
            if state.initialized:
                state.mean = state.momentum * state.mean + (1.0 - state.momentum) * mu
                state.var = state.momentum * state.var + (1.0 - state.momentum) * var
            else:
                state.mean = mu.copy()
                state.var = var.copy()
                state.initialized = True
    else:
        if not state.initialized:
            raise StateError("batch_norm: eval mode before running statistics exist")
        mu = state.mean
        var = state.var

    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (xv - mu) * inv_std
    yv = gamma.data * xhat + beta.data
    out_data = yv[0] if squeeze else yv

    if mode == "eval":

        def bwd(g):
            gv = g[None] if squeeze else g
            _accum(x, (gv * gamma.data * inv_std).reshape(x.data.shape))
            _accum(gamma, (gv * xhat).sum(axis=(0, 1)))
            _accum(beta, gv.sum(axis=(0, 1)))

    else:
        vmask = valid[..., None]

        def bwd(g):
            gv = g[None] if squeeze else g
            gxhat = gv * gamma.data
            # dvar and dmean couple only through the cells that fed the stats
            dvar = -0.5 * (gxhat * xhat).sum(axis=(0, 1)) * inv_std**2
            dmean = -(gxhat.sum(axis=(0, 1))) * inv_std
            gx = gxhat * inv_std + vmask * (
                dvar * 2.0 * xhat / (m * inv_std) + dmean / m
            )
            _accum(x, gx.reshape(x.data.shape))
            _accum(gamma, (gv * xhat).sum(axis=(0, 1)))
            _accum(beta, gv.sum(axis=(0, 1)))

    return _node(out_data, (x, gamma, beta), bwd, "batch_norm")
