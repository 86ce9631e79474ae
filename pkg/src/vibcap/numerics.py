"""Dense tensors with reverse-mode automatic differentiation.

Design notes:
  * Graphs are dynamic: every op appends a node holding its parents and a
    backward closure.  After ``backward()`` the graph is simply dropped.
  * Shape discipline is strict.  Binary elementwise ops accept equal shapes,
    a scalar operand, or an operand whose shape is a suffix of the other
    (expansion across leading axes only).  Everything else raises ShapeError.
  * dtype follows the inputs.  Verification suites run in float64, training
    in float32; mixing the two in one graph is the caller's bug.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf as _erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Operand shapes do not conform to the op's contract."""


class DomainError(ValueError):
    """Operand values outside the op's domain (e.g. log of x <= 0)."""


class Tensor:
    """A value in the computation graph.

    ``data`` is always an ndarray; ``grad`` stays None until a backward pass
    reaches this node.  Leaf tensors created through :class:`ParamStore` are
    trainable; plain constants never collect gradients and op nodes whose
    inputs are all constants are folded into constants.
    """

    __slots__ = ("data", "grad", "requires", "_parents", "_bwd")

    def __init__(self, data, requires=False, parents=(), bwd=None):
        self.data = data
        self.grad = None
        self.requires = requires
        self._parents = parents
        self._bwd = bwd

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __float__(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires={self.requires})"

    # operator sugar; scalars are wrapped as same-dtype constants
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(value, dtype=None) -> Tensor:
    """Wrap an array-like as a non-trainable leaf."""
    arr = np.asarray(value, dtype=dtype)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return Tensor(arr)


def _wrap(value, dtype):
    if isinstance(value, Tensor):
        return value
    return constant(np.asarray(value, dtype=dtype))


def _node(data, parents, bwd):
    """Create an op node, folding to a constant when no parent is trainable."""
    parents = tuple(p for p in parents if p.requires)
    if not parents:
        return Tensor(data)
    return Tensor(data, requires=True, parents=parents, bwd=bwd)


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss: Tensor):
    """Populate gradients of every trainable tensor reachable from ``loss``.

    Gradients accumulate across calls; the training loop zeroes parameter
    grads before each step.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._bwd is not None:
            node._bwd(node.grad)


# ---------------------------------------------------------------------------
# broadcasting rules: equal shapes, scalar, or suffix shape (leading expansion)

def _check_binary(a: Tensor, b: Tensor, op: str):
    sa, sb = a.data.shape, b.data.shape
    if sa == sb or sa == () or sb == ():
        return
    la, lb = len(sa), len(sb)
    if lb < la and sa[la - lb:] == sb:
        return
    if la < lb and sb[lb - la:] == sa:
        return
    raise ShapeError(f"{op}: shapes {sa} and {sb} do not conform")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum(), dtype=g.dtype)
    return g.sum(axis=tuple(range(g.ndim - len(shape))))


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "add")
    out = a.data + b.data

    def bwd(g):
        if a.requires:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _node(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "sub")
    out = a.data - b.data

    def bwd(g):
        if a.requires:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires:
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _node(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "mul")
    out = a.data * b.data

    def bwd(g):
        if a.requires:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "div")
    out = a.data / b.data

    def bwd(g):
        if a.requires:
            _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires:
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, -g)

    return _node(-a.data, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims of {a.data.shape} and {b.data.shape} differ")
    out = a.data @ b.data

    def bwd(g):
        if a.requires:
            _accumulate(a, g @ b.data.T)
        if b.requires:
            _accumulate(b, a.data.T @ g)

    return _node(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# pointwise nonlinearities

def sin(a: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, g * np.cos(a.data))

    return _node(np.sin(a.data), (a,), bwd)


def cos(a: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, -g * np.sin(a.data))

    return _node(np.cos(a.data), (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bwd(g):
        _accumulate(a, g * out)

    return _node(out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log: input has entries <= 0")
    out = np.log(a.data)

    def bwd(g):
        _accumulate(a, g / a.data)

    return _node(out, (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise DomainError("sqrt: input has negative entries")
    out = np.sqrt(a.data)

    def bwd(g):
        _accumulate(a, g * (0.5 / out))

    return _node(out, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    # split by sign for overflow-free evaluation
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        _accumulate(a, g * out * (1.0 - out))

    return _node(out, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(g):
        _accumulate(a, g * (1.0 - out * out))

    return _node(out, (a,), bwd)


def absolute(a: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, g * np.sign(a.data))

    return _node(np.abs(a.data), (a,), bwd)


def square(a: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, g * (2.0 * a.data))

    return _node(a.data * a.data, (a,), bwd)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) gaussian error linear unit."""
    x = a.data
    cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    out = x * cdf

    def bwd(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        _accumulate(a, g * (cdf + x * pdf))

    return _node(out, (a,), bwd)


# ---------------------------------------------------------------------------
# normalizations and reductions

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, out * (g - dot))

    return _node(out, (a,), bwd)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"log_softmax: axis {axis} invalid for shape {a.data.shape}")
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bwd(g):
        _accumulate(a, g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _node(out, (a,), bwd)


def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along ``axis`` (no affine)."""
    mu = a.data.mean(axis=axis, keepdims=True)
    var = a.data.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv

    def bwd(g):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * xhat).mean(axis=axis, keepdims=True)
        _accumulate(a, inv * (g - gm - xhat * gx))

    return _node(xhat, (a,), bwd)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy() if keepdims else np.full_like(a.data, g))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg, a.data.shape).copy())

    return _node(np.asarray(out), (a,), bwd)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accumulate(a, np.full_like(a.data, g / count))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg / count, a.data.shape).copy())

    return _node(np.asarray(out), (a,), bwd)


def sq_norm(a: Tensor) -> Tensor:
    """Sum of squared entries."""
    return reduce_sum(square(a))


# ---------------------------------------------------------------------------
# structural ops

def concat(parts, axis: int = 0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat: empty input list")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]

    def bwd(g):
        offsets = np.cumsum([0] + sizes)
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accumulate(p, g[tuple(idx)])

    return _node(out, parts, bwd)


def slc(a: Tensor, key) -> Tensor:
    """Basic slicing / integer indexing (no fancy indexing)."""
    out = a.data[key]
    if isinstance(out, np.ndarray):
        out = out.copy()
    else:
        out = np.asarray(out)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] = g
        _accumulate(a, full)

    return _node(out, (a,), bwd)


def gather(a: Tensor, index_key) -> Tensor:
    """Fancy indexing with integer arrays; duplicates accumulate on backward."""
    out = a.data[index_key].copy()

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index_key, g)
        _accumulate(a, full)

    return _node(out, (a,), bwd)


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes).copy()
    inv = None if axes is None else np.argsort(axes)

    def bwd(g):
        _accumulate(a, np.transpose(g, inv))

    return _node(out, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape).copy()

    def bwd(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _node(out, (a,), bwd)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup: ids (T,) int array -> (T, D)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"embedding: ids must be 1-D, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise DomainError(f"embedding: id out of range [0, {table.data.shape[0]})")
    out = table.data[ids].copy()

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        _accumulate(table, full)

    return _node(out, (table,), bwd)


# ---------------------------------------------------------------------------
# temporal ops: convolution and pooling over the leading (time) axis

def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Same-length temporal convolution with edge-replication padding.

    x: (T, C_in), w: (K, C_in, C_out), b: (C_out,).  Output (T, C_out).
    Edge replication (rather than zero padding) keeps constant inputs
    mapping to constant outputs, boundary rows included.
    """
    if x.data.ndim != 2 or w.data.ndim != 3:
        raise ShapeError(f"conv1d: expected x (T,Cin), w (K,Cin,Cout); got {x.data.shape}, {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"conv1d: channel mismatch {x.data.shape} vs {w.data.shape}")
    T = x.data.shape[0]
    K = w.data.shape[0]
    left = (K - 1) // 2
    right = K - 1 - left
    xp = np.pad(x.data, ((left, right), (0, 0)), mode="edge")
    out = np.zeros((T, w.data.shape[2]), dtype=x.data.dtype)
    for k in range(K):
        out += xp[k:k + T] @ w.data[k]
    if b is not None:
        if b.data.shape != (w.data.shape[2],):
            raise ShapeError(f"conv1d: bias shape {b.data.shape} vs channels {w.data.shape[2]}")
        out += b.data

    def bwd(g):
        if x.requires:
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[k:k + T] += g @ w.data[k].T
            gx = gxp[left:left + T].copy()
            gx[0] += gxp[:left].sum(axis=0)       # fold replicated-edge grads back
            gx[T - 1] += gxp[left + T:].sum(axis=0)
            _accumulate(x, gx)
        if w.requires:
            gw = np.empty_like(w.data)
            for k in range(K):
                gw[k] = xp[k:k + T].T @ g
            _accumulate(w, gw)
        if b is not None and b.requires:
            _accumulate(b, g.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, bwd)


def max_pool_time(x: Tensor, size: int = 2, stride: int = 2) -> Tensor:
    """Ceil-mode max pooling over axis 0 of a (T, C) tensor."""
    if x.data.ndim != 2:
        raise ShapeError(f"max_pool_time expects (T, C), got {x.data.shape}")
    T, C = x.data.shape
    n_out = max(1, -(-(T - size) // stride) + 1)
    out = np.empty((n_out, C), dtype=x.data.dtype)
    arg = np.empty((n_out, C), dtype=np.int64)
    for i in range(n_out):
        lo = i * stride
        hi = min(lo + size, T)
        win = x.data[lo:hi]
        idx = win.argmax(axis=0)
        arg[i] = lo + idx
        out[i] = win[idx, np.arange(C)]

    def bwd(g):
        full = np.zeros_like(x.data)
        cols = np.broadcast_to(np.arange(C), arg.shape)
        np.add.at(full, (arg.ravel(), cols.ravel()), g.ravel())
        _accumulate(x, full)

    return _node(out, (x,), bwd)


def mean_pool_time(x: Tensor) -> Tensor:
    """Average over axis 0: (T, C) -> (C,)."""
    return reduce_mean(x, axis=0)


def pool_time_to(x: Tensor, target: int) -> Tensor:
    """Adaptive average pooling of (T, C) down to (target, C) frames."""
    T = x.data.shape[0]
    if target > T:
        raise ShapeError(f"pool_time_to: target {target} exceeds length {T}")
    if target == T:
        return x
    P = np.zeros((target, T), dtype=x.data.dtype)
    for i in range(target):
        lo = (i * T) // target
        hi = ((i + 1) * T) // target
        P[i, lo:hi] = 1.0 / (hi - lo)
    return matmul(constant(P), x)


# ---------------------------------------------------------------------------
# parameters

class ParamStore:
    """Ordered, named collection of trainable tensors.

    Matrices are initialized uniform in +-sqrt(6 / (fan_in + fan_out)),
    biases to zero, from a generator seeded at construction; identical
    construction order reproduces identical values bit for bit.
    """

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self._rng = np.random.default_rng(seed)
        self.entries: dict[str, Tensor] = {}

    def _register(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        # np.array keeps 0-d shapes (ascontiguousarray would promote them to 1-d)
        t = Tensor(np.array(data, dtype=self.dtype, order="C"), requires=True)
        self.entries[name] = t
        return t

    def matrix(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        data = self._rng.uniform(-bound, bound, size=(fan_in, fan_out))
        return self._register(name, data)

    def kernel(self, name: str, k: int, c_in: int, c_out: int) -> Tensor:
        bound = math.sqrt(6.0 / (k * c_in + c_out))
        data = self._rng.uniform(-bound, bound, size=(k, c_in, c_out))
        return self._register(name, data)

    def zeros(self, name: str, shape) -> Tensor:
        return self._register(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self._register(name, np.ones(shape))

    def scalar(self, name: str, value: float) -> Tensor:
        return self._register(name, np.asarray(value))

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self):
        return iter(self.entries.items())

    def names(self):
        return list(self.entries)

    def zero_grads(self):
        for t in self.entries.values():
            t.grad = None

    def num_params(self) -> int:
        return sum(t.data.size for t in self.entries.values())

    def rng_state(self) -> dict:
        return self._rng.bit_generator.state

    def set_rng_state(self, state: dict):
        self._rng.bit_generator.state = state


# ---------------------------------------------------------------------------
# finite-difference gradient checking

@dataclass
class GradCheckReport:
    max_rel_err: float
    mean_rel_err: float
    worst: str
    checked: int
    passed_fraction: float = 1.0
    per_param: dict = field(default_factory=dict)
    non_finite: list = field(default_factory=list)

    def passes(self, gate: float, min_fraction: float = 1.0) -> bool:
        if self.non_finite:
            return False
        if min_fraction >= 1.0:
            return self.max_rel_err < gate
        return self.passed_fraction >= min_fraction

    def summary(self) -> str:
        lines = [
            f"coordinates checked: {self.checked}",
            f"max relative error:  {self.max_rel_err:.3e}  (worst: {self.worst})",
            f"mean relative error: {self.mean_rel_err:.3e}",
        ]
        if self.non_finite:
            lines.append("non-finite values at: " + ", ".join(self.non_finite))
        return "\n".join(lines)


def rel_err(a: float, n: float) -> float:
    """Relative error with a floored denominator.

    Below magnitude 0.01 the comparison switches to an absolute scale
    (|a - n| / 0.01): central differences carry ~1e-10 of truncation and
    roundoff noise, so a pure ratio is meaningless for tiny gradients.
    """
    return abs(a - n) / max(abs(a), abs(n), 1e-2)


def grad_check(f, params: ParamStore, samples: int | None = None, step: float = 1e-5,
               gate: float = 1e-6, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central finite differences.

    ``f`` must rebuild its graph from the live parameter data on every call
    and return a scalar Tensor.  ``samples`` limits the number of coordinates
    probed per parameter (None = all).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params.zero_grads()
    loss = f()
    backward(loss)
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for name, t in params}

    rng = np.random.default_rng(seed)
    errs = []
    per_param = {}
    non_finite = []
    worst = ("", -1.0)
    gate_hits = 0
    for name, t in params:
        flat = t.data.reshape(-1)
        n = flat.size
        if samples is None or samples >= n:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=samples, replace=False)
        p_errs = []
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            hi = float(f().data)
            flat[c] = orig - step
            lo = float(f().data)
            flat[c] = orig
            if not (math.isfinite(hi) and math.isfinite(lo)):
                non_finite.append(f"{name}[{c}]")
                continue
            numeric = (hi - lo) / (2.0 * step)
            a = float(analytic[name].reshape(-1)[c])
            e = rel_err(a, numeric)
            p_errs.append(e)
            errs.append(e)
            if e < gate:
                gate_hits += 1
            if e > worst[1]:
                idx = np.unravel_index(c, t.data.shape)
                worst = (f"{name}{list(idx)}", e)
        if p_errs:
            per_param[name] = (max(p_errs), float(np.mean(p_errs)))
    if not errs:
        return GradCheckReport(0.0, 0.0, "(none)", 0, 1.0, per_param, non_finite)
    return GradCheckReport(
        max_rel_err=float(max(errs)),
        mean_rel_err=float(np.mean(errs)),
        worst=worst[0],
        checked=len(errs),
        passed_fraction=gate_hits / len(errs),
        per_param=per_param,
        non_finite=non_finite,
    )
