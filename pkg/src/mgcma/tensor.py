"""Dense float64 tensors with reverse-mode differentiation.

All arithmetic is double precision. Every operation records its parents and
a backward closure; ``backward`` replays them in reverse construction order,
which is a topological order of the graph and therefore deterministic.
Graph recording can be suspended with ``no_grad()`` for cheap re-evaluation
(finite differences, inference); in that mode no finiteness checks run.
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import (
    ContractError,
    DegenerateInputError,
    EmptySequenceError,
    NonFiniteError,
    ShapeError,
)

_grad_enabled = True
_node_counter = 0


@contextmanager
def no_grad():
    """Suspend graph recording (and per-op finiteness checks) in this block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _check_finite(data: np.ndarray) -> None:
    # NaN/Inf both poison a sum, so one cheap reduction screens the array;
    # the exact check runs only on the rare overflow of the screen itself.
    with np.errstate(over="ignore", invalid="ignore"):
        if not math.isfinite(float(np.sum(data))):
            if not np.all(np.isfinite(data)):
                raise NonFiniteError("tensor holds NaN or Inf values")


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode autodiff.

    Instances are immutable once created, except for the two documented
    mutation points: gradient accumulation during ``backward`` and in-place
    parameter updates performed between graph lifetimes.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_nid")

    def __init__(self, data, requires_grad: bool = False):
        global _node_counter
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        _node_counter += 1
        self._nid = _node_counter

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self) -> None:
        backward(self)

    # Operator sugar over the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data, parents: tuple) -> Tensor:
    """Create an op-result node; graph bookkeeping only while grad is enabled."""
    global _node_counter
    out = Tensor.__new__(Tensor)
    out.data = data if type(data) is np.ndarray else np.asarray(data, dtype=np.float64)
    out.grad = None
    out._backward = None
    _node_counter += 1
    out._nid = _node_counter
    if _grad_enabled:
        _check_finite(data)
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = parents if out.requires_grad else ()
    else:
        out.requires_grad = False
        out._parents = ()
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _node(a.data + b.data, (a, b))
    if out.requires_grad:
        def _bw(g, a=a, b=b):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))
        out._backward = _bw
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _node(a.data - b.data, (a, b))
    if out.requires_grad:
        def _bw(g, a=a, b=b):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(-_unbroadcast(g, b.data.shape))
        out._backward = _bw
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _node(a.data * b.data, (a, b))
    if out.requires_grad:
        def _bw(g, a=a, b=b):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))
        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.data.shape} @ {b.data.shape}")
    out = _node(a.data @ b.data, (a, b))
    if out.requires_grad:
        def _bw(g, a=a, b=b):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)
        out._backward = _bw
    return out


def transpose(x) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose needs a rank-2 tensor, got shape {x.data.shape}")
    out = _node(np.ascontiguousarray(x.data.T), (x,))
    if out.requires_grad:
        def _bw(g, x=x):
            x._accumulate(g.T)
        out._backward = _bw
    return out


def linear(x, weight, bias=None) -> Tensor:
    """Affine map ``x @ weight (+ bias)`` for a [.., Din] input."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def dot(u, v) -> Tensor:
    u, v = _as_tensor(u), _as_tensor(v)
    if u.data.ndim != 1 or v.data.ndim != 1 or u.data.shape != v.data.shape:
        raise ShapeError(f"dot needs equal-length vectors, got {u.data.shape} and {v.data.shape}")
    out = _node(np.dot(u.data, v.data), (u, v))
    if out.requires_grad:
        def _bw(g, u=u, v=v):
            if u.requires_grad:
                u._accumulate(g * v.data)
            if v.requires_grad:
                v._accumulate(g * u.data)
        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# reductions and row-wise maps


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    out = _node(np.sum(x.data), (x,))
    if out.requires_grad:
        def _bw(g, x=x):
            x._accumulate(np.broadcast_to(g, x.data.shape))
        out._backward = _bw
    return out


def mean_all(x) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size
    if n == 0:
        raise EmptySequenceError("mean of an empty tensor")
    out = _node(np.sum(x.data) / n, (x,))
    if out.requires_grad:
        def _bw(g, x=x, n=n):
            x._accumulate(np.broadcast_to(g / n, x.data.shape))
        out._backward = _bw
    return out


def mean_pool(x) -> Tensor:
    """Arithmetic mean over the sequence axis of an [L, D] tensor."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"mean_pool needs an [L, D] tensor, got shape {x.data.shape}")
    length = x.data.shape[0]
    if length == 0:
        raise EmptySequenceError("mean_pool over an empty sequence")
    out = _node(x.data.sum(axis=0) / length, (x,))
    if out.requires_grad:
        def _bw(g, x=x, length=length):
            x._accumulate(np.broadcast_to(g / length, x.data.shape))
        out._backward = _bw
    return out


def l2_normalize(v) -> Tensor:
    """Scale a vector to unit Euclidean norm."""
    v = _as_tensor(v)
    if v.data.ndim != 1:
        raise ShapeError(f"l2_normalize needs a vector, got shape {v.data.shape}")
    nrm = float(np.linalg.norm(v.data))
    if nrm == 0.0:
        raise DegenerateInputError("cannot normalize a zero vector")
    unit = v.data / nrm
    out = _node(unit, (v,))
    if out.requires_grad:
        def _bw(g, v=v, unit=unit, nrm=nrm):
            v._accumulate((g - unit * np.dot(unit, g)) / nrm)
        out._backward = _bw
    return out


def softmax_rows(x) -> Tensor:
    """Row-wise softmax of an [M, N] tensor, stabilised by max subtraction."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows needs an [M, N] tensor, got shape {x.data.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = _node(y, (x,))
    if out.requires_grad:
        def _bw(g, x=x, y=y):
            x._accumulate(y * (g - (g * y).sum(axis=1, keepdims=True)))
        out._backward = _bw
    return out


def log_softmax_rows(x) -> Tensor:
    """Row-wise log-softmax, the stable building block for the losses."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"log_softmax_rows needs an [M, N] tensor, got shape {x.data.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - lse
    out = _node(y, (x,))
    if out.requires_grad:
        def _bw(g, x=x, y=y):
            x._accumulate(g - np.exp(y) * g.sum(axis=1, keepdims=True))
        out._backward = _bw
    return out


def softplus(x) -> Tensor:
    """Elementwise log(1 + exp(x)), computed overflow-free."""
    x = _as_tensor(x)
    y = np.logaddexp(0.0, x.data)
    out = _node(y, (x,))
    if out.requires_grad:
        def _bw(g, x=x):
            x._accumulate(g / (1.0 + np.exp(-x.data)))
        out._backward = _bw
    return out


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Parameter-free per-row normalization of an [L, D] tensor."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm needs an [L, D] tensor, got shape {x.data.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    centred = x.data - mu
    var = (centred * centred).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centred * inv
    out = _node(y, (x,))
    if out.requires_grad:
        def _bw(g, x=x, y=y, inv=inv):
            gm = g.mean(axis=1, keepdims=True)
            gy = (g * y).mean(axis=1, keepdims=True)
            x._accumulate(inv * (g - gm - y * gy))
        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# shape assembly


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    if not parts:
        raise EmptySequenceError("concat of zero tensors")
    data = np.concatenate([p.data for p in parts], axis=axis)
    out = _node(data, tuple(parts))
    if out.requires_grad:
        sizes = [p.data.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)
        def _bw(g, parts=parts, offsets=offsets, axis=axis):
            idx = [slice(None)] * g.ndim
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    idx[axis] = slice(lo, hi)
                    p._accumulate(g[tuple(idx)])
        out._backward = _bw
    return out


def stack_rows(tensors: Sequence) -> Tensor:
    """Stack N equal-length vectors (or N scalars) into a new leading axis."""
    parts = [_as_tensor(t) for t in tensors]
    if not parts:
        raise EmptySequenceError("stack of zero tensors")
    data = np.stack([p.data for p in parts], axis=0)
    out = _node(data, tuple(parts))
    if out.requires_grad:
        def _bw(g, parts=parts):
            for i, p in enumerate(parts):
                if p.requires_grad:
                    p._accumulate(g[i])
        out._backward = _bw
    return out


def take_per_row(x, cols) -> Tensor:
    """Pick one entry per row of an [M, N] tensor: out[i] = x[i, cols[i]]."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"take_per_row needs an [M, N] tensor, got shape {x.data.shape}")
    cols = np.asarray(cols, dtype=np.intp)
    if cols.shape != (x.data.shape[0],):
        raise ShapeError("take_per_row needs one column index per row")
    if cols.size and (cols.min() < 0 or cols.max() >= x.data.shape[1]):
        raise ShapeError("take_per_row column index out of range")
    rows = np.arange(x.data.shape[0])
    out = _node(x.data[rows, cols], (x,))
    if out.requires_grad:
        def _bw(g, x=x, rows=rows, cols=cols):
            full = np.zeros_like(x.data)
            full[rows, cols] = g
            x._accumulate(full)
        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable tensor.

    Nodes are processed in decreasing construction order, which is a
    topological order of the DAG, so repeated runs are bit-identical.
    """
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        raise ContractError("backward requires a scalar tensor")
    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen or not t.requires_grad:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t._nid, reverse=True)
    loss._accumulate(np.ones((), dtype=np.float64))
    for t in nodes:
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)


def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-4) -> float:
    """Compare analytic gradients of ``f()`` against central finite differences.

    ``f`` must rebuild its graph on every call and read its inputs from
    ``params``. Returns the maximum elementwise relative error, with the
    denominator floored at 1e-8.
    """
    if h <= 0:
        raise ContractError("finite-difference step must be positive")
    params = list(params)
    for p in params:
        p.grad = None
    out = f()
    if out.data.shape != ():
        raise ContractError("grad_check requires a scalar-valued computation")
    backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    max_rel = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            gflat = ga.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                f_plus = float(f().data)
                flat[j] = orig - h
                f_minus = float(f().data)
                flat[j] = orig
                numeric = (f_plus - f_minus) / (2.0 * h)
                rel = abs(gflat[j] - numeric) / max(abs(gflat[j]), abs(numeric), 1e-8)
                if rel > max_rel:
                    max_rel = rel
    for p in params:
        p.grad = None
    return max_rel


# ---------------------------------------------------------------------------
# parameter store


class ParameterStore:
    """Named trainable tensors with seeded, replayable initialization.

    Creation order is the canonical iteration order; re-initializing replays
    the same draws and reproduces every value bit-for-bit.
    """

    def __init__(self, rng_seed: int):
        self.rng_seed = int(rng_seed)
        self._rng = np.random.default_rng(self.rng_seed)
        self._params: dict[str, Tensor] = {}
        self._recipe: list[tuple[str, tuple, Optional[int]]] = []

    def _register(self, name: str, t: Tensor, shape: tuple, fan_in: Optional[int]) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name: {name!r}")
        self._params[name] = t
        self._recipe.append((name, shape, fan_in))
        return t

    def uniform(self, name: str, shape: Sequence[int], fan_in: int) -> Tensor:
        """Weight matrix drawn uniformly from [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
        bound = 1.0 / math.sqrt(fan_in)
        data = self._rng.uniform(-bound, bound, size=tuple(shape))
        return self._register(name, Tensor(data, requires_grad=True), tuple(shape), fan_in)

    def zeros(self, name: str, shape: Sequence[int]) -> Tensor:
        data = np.zeros(tuple(shape), dtype=np.float64)
        return self._register(name, Tensor(data, requires_grad=True), tuple(shape), None)

    def reinitialize(self) -> None:
        """Re-draw every parameter from the stored seed, bit-for-bit."""
        self._rng = np.random.default_rng(self.rng_seed)
        for name, shape, fan_in in self._recipe:
            if fan_in is None:
                self._params[name].data[...] = 0.0
            else:
                bound = 1.0 / math.sqrt(fan_in)
                self._params[name].data[...] = self._rng.uniform(-bound, bound, size=shape)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def parameters(self):
        return self._params.values()
