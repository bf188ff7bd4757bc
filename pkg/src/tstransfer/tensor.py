"""Dense float32 tensors with reverse-mode automatic differentiation.

The graph is define-by-run: every op on tensors that require gradients
records a node holding its parents and a closure that maps the output
gradient to parent gradients. ``backward`` walks the recorded graph once
in reverse topological order, accumulating gradients additively whenever
a tensor feeds several consumers.

float64 is supported only so the finite-difference oracle in
``grad_check`` can evaluate functions at higher precision; everything
else runs in float32.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation / generation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype != np.float64:
            arr = arr.astype(np.float32, copy=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars take the cheap scale/shift path
    def __add__(self, other):
        return add(self, _lift(other, self))

    def __radd__(self, other):
        return add(_lift(other, self), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        raise TypeError("tensor/tensor division is not supported")

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    t = Tensor.__new__(Tensor)
    t.data = np.asarray(value, dtype=like.data.dtype)
    t.requires_grad = False
    t.grad = None
    t._parents = ()
    t._grad_fn = None
    return t


def _node(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    """Wrap an op result; records the node only if a parent needs gradients."""
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = parents
        t._grad_fn = grad_fn
    else:
        t.requires_grad = False
        t._parents = ()
        t._grad_fn = None
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(out, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(out, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def grad_fn(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _node(out, (a, b), grad_fn)


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    out = x.data * s

    def grad_fn(g):
        return (g * s,)

    return _node(out, (x,), grad_fn)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def grad_fn(g):
        return (g * (x.data > 0),)

    return _node(out, (x,), grad_fn)


# tanh approximation: 0.5*x*(1 + tanh(c0*(x + c1*x^3)))
# c0 = sqrt(2/pi), c1 = 0.044715
_GELU_C0 = 0.7978845608028654
_GELU_C1 = 0.044715


def gelu(x: Tensor) -> Tensor:
    u = _GELU_C0 * (x.data + _GELU_C1 * x.data**3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def grad_fn(g):
        du = _GELU_C0 * (1.0 + 3.0 * _GELU_C1 * x.data**2)
        local = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t**2) * du
        return (g * local,)

    return _node(out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul requires >=2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def grad_fn(g):
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _node(out, (a, b), grad_fn)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = np.transpose(x.data, axes)
    inv = np.argsort(axes)

    def grad_fn(g):
        return (np.transpose(g, inv),)

    return _node(out, (x,), grad_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(x.data.shape),)

    return _node(out, (x,), grad_fn)


def concatenate(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(tensors), grad_fn)


def embedding(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup: output shape = indices.shape + (row_dim,)."""
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ContractError(
            f"embedding index out of range for table with {table.data.shape[0]} rows"
        )
    out = table.data[idx]

    def grad_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.ravel(), g.reshape(-1, table.data.shape[1]))
        return (gt,)

    return _node(out, (table,), grad_fn)


# ---------------------------------------------------------------------------
# reductions and normalizations


def tsum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def grad_fn(g):
        return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype),)

    return _node(out, (x,), grad_fn)


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean(), dtype=x.data.dtype)

    def grad_fn(g):
        return (np.broadcast_to(g / n, x.data.shape).astype(x.data.dtype),)

    return _node(out, (x,), grad_fn)


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis, max-subtracted for stability."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (x,), grad_fn)


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """out = gain * x / sqrt(mean(x^2, last axis) + eps)."""
    if gain.data.shape != x.data.shape[-1:]:
        raise ShapeError(f"rms_norm gain shape {gain.data.shape} != last axis of {x.data.shape}")
    d = x.data.shape[-1]
    m = (x.data**2).mean(axis=-1, keepdims=True)
    r = np.sqrt(m + eps)
    y = x.data / r
    out = gain.data * y

    def grad_fn(g):
        gg = _unbroadcast(g * y, gain.data.shape)
        gy = g * gain.data
        # d(x_j/r)/dx: delta/r - x_k*x_j/(d*r^3)
        inner = (gy * x.data).sum(axis=-1, keepdims=True)
        gx = gy / r - x.data * inner / (d * r**3)
        return gx, gg

    return _node(out, (x, gain), grad_fn)


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``logits``.

    ``logits`` is [N, C]; ``mask`` selects the positions that count.
    Stable log-sum-exp with max subtraction.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects 2-d logits, got {logits.data.shape}")
    n, c = logits.data.shape
    targets = np.asarray(targets)
    if targets.shape != (n,):
        raise ShapeError(f"targets shape {targets.shape} != ({n},)")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise ContractError(f"target index out of range for {c} classes")
    if mask is None:
        m = np.ones(n, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
    count = int(m.sum())
    if count == 0:
        raise ContractError("cross_entropy: all positions are masked")

    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    logp = z[np.arange(n), targets] - lse
    out = np.asarray(-(logp * m).sum() / count, dtype=logits.data.dtype)

    def grad_fn(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), targets] -= 1.0
        p *= (m / count)[:, None]
        return (p * g,)

    return _node(out, (logits,), grad_fn)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad tensor reachable from ``loss``."""
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._grad_fn is None:
            continue
        grads = node._grad_fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if not parent.requires_grad or g is None:
                continue
            # accumulation rebinds rather than mutates, so aliased views are safe
            parent.grad = g if parent.grad is None else parent.grad + g


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: tuple[int, ...] | None
    passed: bool
    has_nan: bool = False

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"grad_check {status}: max rel error {self.max_rel_error:.3e} at {self.worst_index}"


def grad_check(f, x, h: float = 1e-3, tol: float = 1e-3) -> GradCheckReport:
    """Compare the analytic gradient of scalar ``f`` at ``x`` with central differences.

    The analytic side runs in float32 (the production path); the
    finite-difference oracle re-evaluates ``f`` in float64. Errors are
    measured relative to the largest gradient magnitude, which keeps the
    check meaningful on coordinates whose gradient is near zero.
    """
    x0 = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float32)

    xt = Tensor(x0.copy(), requires_grad=True)
    loss = f(xt)
    backward(loss)
    analytic = np.zeros_like(x0) if xt.grad is None else np.asarray(xt.grad)

    x64 = x0.astype(np.float64)
    numeric = np.zeros_like(x64)
    flat = x64.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor(x64)).item())
        flat[i] = orig - h
        fm = float(f(Tensor(x64)).item())
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * h)

    a64 = analytic.astype(np.float64)
    nan_mask = ~(np.isfinite(a64) & np.isfinite(numeric))
    if nan_mask.any():
        idx = tuple(int(j) for j in np.unravel_index(np.argmax(nan_mask), x0.shape))
        return GradCheckReport(float("nan"), idx, passed=False, has_nan=True)

    denom = max(np.abs(a64).max(), np.abs(numeric).max(), 1e-8)
    errs = np.abs(a64 - numeric) / denom
    worst = tuple(int(j) for j in np.unravel_index(np.argmax(errs), x0.shape))
    max_err = float(errs.max())
    return GradCheckReport(max_err, worst, passed=max_err <= tol)
