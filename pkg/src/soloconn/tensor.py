"""Dense float64 tensors with reverse-mode automatic differentiation.

Deliberately small: matrices, vectors and scalars, exact analytic adjoints
for every primitive, and just enough broadcasting for bias adds and
elementwise gating. Each op links its output to its inputs; ``backward``
replays the recorded chain in reverse topological order. Everything is
64-bit so finite-difference checks can be held to tight tolerances.

Gradient semantics:
  * leaf gradients accumulate additively across backward passes until
    ``zero_grad`` clears them;
  * interior-node gradients are scratch space, reset at the start of every
    backward pass.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, InputError

# per-thread so an eval in one run cannot stop a concurrent run's recording
_grad_mode = threading.local()


def _grad_enabled() -> bool:
    return getattr(_grad_mode, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (cheap eval-mode forwards)."""
    prev = _grad_enabled()
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = prev


class Tensor:
    """A dense float64 array plus the bookkeeping reverse-mode AD needs.

    The recorded computation consists of ``_parents`` links and ``_backward``
    closures; construction order guarantees every op appears after the ops
    producing its inputs, so a depth-first ordering from the loss is a valid
    reverse schedule.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable[[], None]] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        nm = f", name={self.name!r}" if self.name else ""
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{rg}{nm})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def transpose(self) -> "Tensor":
        return transpose(self)

    def cols(self, start: int, stop: int) -> "Tensor":
        return slice_cols(self, start, stop)

    def sum(self) -> "Tensor":
        return tsum(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor]) -> Tensor:
    track = _grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
    return out


def _accum(t: Tensor, g: np.ndarray, owned: bool = False) -> None:
    """Add a gradient contribution. ``owned=True`` promises the caller hands
    over a freshly allocated array that aliases nothing else, letting it be
    adopted without a defensive copy."""
    if t.grad is None:
        t.grad = g if owned else np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape of the broadcast input."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate grads of every requires_grad tensor reachable from a scalar loss."""
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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

    # interior grads are per-pass scratch; leaf grads accumulate across passes
    for node in topo:
        if node._parents:
            node.grad = None

    _accum(loss, np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward()


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = _make(a.data + b.data, (a, b))
    if out.requires_grad:
        def bw():
            g = out.grad
            if a.requires_grad:
                ga = _unbroadcast(g, a.data.shape)
                _accum(a, ga, owned=ga is not g)
            if b.requires_grad:
                gb = _unbroadcast(g, b.data.shape)
                _accum(b, gb, owned=gb is not g)
        out._backward = bw
    return out


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = _make(a.data - b.data, (a, b))
    if out.requires_grad:
        def bw():
            g = out.grad
            if a.requires_grad:
                ga = _unbroadcast(g, a.data.shape)
                _accum(a, ga, owned=ga is not g)
            if b.requires_grad:
                _accum(b, _unbroadcast(-g, b.data.shape), owned=True)
        out._backward = bw
    return out


def mul(a, b) -> Tensor:
    """Hadamard product with numpy broadcasting (vector gates, scalar gates)."""
    a, b = _wrap(a), _wrap(b)
    out = _make(a.data * b.data, (a, b))
    if out.requires_grad:
        def bw():
            g = out.grad
            if a.requires_grad:
                _accum(a, _unbroadcast(g * b.data, a.data.shape), owned=True)
            if b.requires_grad:
                _accum(b, _unbroadcast(g * a.data, b.data.shape), owned=True)
        out._backward = bw
    return out


def scale(a, s: float) -> Tensor:
    a = _wrap(a)
    s = float(s)
    out = _make(a.data * s, (a,))
    if out.requires_grad:
        def bw():
            _accum(a, out.grad * s, owned=True)
        out._backward = bw
    return out


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.data.shape} x {b.data.shape}")
    out = _make(a.data @ b.data, (a, b))
    if out.requires_grad:
        def bw():
            g = out.grad
            if a.requires_grad:
                _accum(a, g @ b.data.T, owned=True)
            if b.requires_grad:
                _accum(b, a.data.T @ g, owned=True)
        out._backward = bw
    return out


def linear(x, w, b) -> Tensor:
    """Fused x @ w + b (bias broadcast over rows)."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise DimensionError(f"linear shape mismatch: {x.data.shape} x {w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise DimensionError(f"linear bias shape {b.data.shape} does not match {w.data.shape[1]}")
    y = x.data @ w.data
    y += b.data
    out = _make(y, (x, w, b))
    if out.requires_grad:
        def bw():
            g = out.grad
            if x.requires_grad:
                _accum(x, g @ w.data.T, owned=True)
            if w.requires_grad:
                _accum(w, x.data.T @ g, owned=True)
            if b.requires_grad:
                _accum(b, g.sum(axis=0), owned=True)
        out._backward = bw
    return out


def transpose(a) -> Tensor:
    a = _wrap(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.data.shape}")
    out = _make(np.ascontiguousarray(a.data.T), (a,))
    if out.requires_grad:
        def bw():
            _accum(a, out.grad.T)
        out._backward = bw
    return out


def tsum(a) -> Tensor:
    a = _wrap(a)
    out = _make(np.asarray(a.data.sum()), (a,))
    if out.requires_grad:
        def bw():
            _accum(a, np.full(a.data.shape, float(out.grad)), owned=True)
        out._backward = bw
    return out


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(a) -> Tensor:
    a = _wrap(a)
    x = a.data
    t = x * x
    t *= x
    t *= _GELU_A
    t += x
    t *= _GELU_C
    np.tanh(t, out=t)
    y = t + 1.0
    y *= x
    y *= 0.5
    out = _make(y, (a,))
    if out.requires_grad:
        def bw():
            # d/dx [0.5 x (1+t)] with t = tanh(C (x + A x^3))
            dinner = x * x
            dinner *= 3.0 * _GELU_A
            dinner += 1.0
            dinner *= _GELU_C
            dinner *= 1.0 - t * t
            dinner *= 0.5 * x
            dinner += 0.5 * (1.0 + t)
            dinner *= out.grad
            _accum(a, dinner, owned=True)
        out._backward = bw
    return out


def softmax(a) -> Tensor:
    """Softmax over the last axis, numerically stabilized."""
    a = _wrap(a)
    if a.data.ndim == 0 or a.data.shape[-1] == 0:
        raise DimensionError(f"softmax on empty axis, shape {a.data.shape}")
    s = a.data - a.data.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    out = _make(s, (a,))
    if out.requires_grad:
        def bw():
            g = out.grad
            dot = (g * s).sum(axis=-1, keepdims=True)
            _accum(a, s * (g - dot), owned=True)
        out._backward = bw
    return out


def attn_softmax(q, k, mask: np.ndarray, scaling: float) -> Tensor:
    """Fused attention weights: softmax(scaling * q @ k^T + mask).

    ``mask`` is a constant additive array (0 / -inf); rows with -inf entries
    get exactly-zero weights, so masked positions contribute nothing to
    either the forward value or the gradients.
    """
    q, k = _wrap(q), _wrap(k)
    if q.data.ndim != 2 or k.data.ndim != 2 or q.data.shape[1] != k.data.shape[1]:
        raise DimensionError(f"attn_softmax shape mismatch: {q.data.shape} x {k.data.shape}")
    s = q.data @ k.data.T
    s *= scaling
    s += mask
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    out = _make(s, (q, k))
    if out.requires_grad:
        def bw():
            g = out.grad
            gs = s * (g - (g * s).sum(axis=-1, keepdims=True))
            gs *= scaling
            if q.requires_grad:
                _accum(q, gs @ k.data, owned=True)
            if k.requires_grad:
                _accum(k, gs.T @ q.data, owned=True)
        out._backward = bw
    return out


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    a, gain, bias = _wrap(a), _wrap(gain), _wrap(bias)
    d = a.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise DimensionError(
            f"layer_norm params {gain.data.shape}/{bias.data.shape} do not match last dim {d}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    xhat = a.data - mu
    var = (xhat * xhat).mean(axis=-1, keepdims=True)
    var += eps
    np.sqrt(var, out=var)
    inv = np.reciprocal(var, out=var)
    xhat *= inv
    y = xhat * gain.data
    y += bias.data
    out = _make(y, (a, gain, bias))
    if out.requires_grad:
        def bw():
            g = out.grad
            if bias.requires_grad:
                _accum(bias, g.reshape(-1, d).sum(axis=0), owned=True)
            if gain.requires_grad:
                _accum(gain, (g * xhat).reshape(-1, d).sum(axis=0), owned=True)
            if a.requires_grad:
                gx = g * gain.data
                m1 = gx.mean(axis=-1, keepdims=True)
                m2 = (gx * xhat).mean(axis=-1, keepdims=True)
                gx -= m1
                gx -= xhat * m2
                gx *= inv
                _accum(a, gx, owned=True)
        out._backward = bw
    return out


def dropout(a, rate: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: scales by 1/(1-rate) in training, identity in eval.

    rate 0 is the exact identity (no mask drawn, no graph node).
    """
    a = _wrap(a)
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ConfigError("dropout in training mode requires an rng")
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    out = _make(a.data * mask, (a,))
    if out.requires_grad:
        def bw():
            _accum(a, out.grad * mask, owned=True)
        out._backward = bw
    return out


def embedding(table, ids) -> Tensor:
    """Row lookup into an embedding table; gradient scatter-adds to the rows."""
    table = _wrap(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise InputError(f"embedding ids must be integers, got dtype {ids.dtype}")
    if ids.ndim != 1:
        raise InputError(f"embedding ids must be 1-D, got shape {ids.shape}")
    n = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = int(ids[(ids < 0) | (ids >= n)][0])
        raise InputError(f"embedding id {bad} out of range [0, {n})")
    out = _make(table.data[ids], (table,))
    if out.requires_grad:
        def bw():
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, out.grad)
            _accum(table, gt, owned=True)
        out._backward = bw
    return out


def cross_entropy(logits, targets, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under row-wise softmax.

    ``mask`` (0/1 per row) restricts the mean to selected positions.
    """
    logits = _wrap(logits)
    if logits.data.ndim != 2 or logits.data.shape[-1] == 0:
        raise DimensionError(f"cross_entropy expects [rows x classes], got {logits.data.shape}")
    t = np.asarray(targets)
    rows, classes = logits.data.shape
    if t.shape != (rows,) or not np.issubdtype(t.dtype, np.integer):
        raise InputError(f"targets must be {rows} integers, got shape {t.shape} dtype {t.dtype}")
    if t.size and (t.min() < 0 or t.max() >= classes):
        raise InputError(f"target id out of range [0, {classes})")
    if mask is None:
        w = np.ones(rows)
    else:
        w = np.asarray(mask, dtype=np.float64)
        if w.shape != (rows,):
            raise DimensionError(f"mask shape {w.shape} does not match {rows} rows")
    denom = w.sum()
    if denom <= 0:
        raise ConfigError("cross_entropy mask selects no positions")

    m = logits.data.max(axis=-1, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    nll = -logp[np.arange(rows), t]
    out = _make(np.asarray((nll * w).sum() / denom), (logits,))
    if out.requires_grad:
        def bw():
            p = np.exp(logp)
            p[np.arange(rows), t] -= 1.0
            p *= (w * (float(out.grad) / denom))[:, None]
            _accum(logits, p, owned=True)
        out._backward = bw
    return out


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = _wrap(a)
    if a.data.ndim != 2:
        raise DimensionError(f"slice_cols expects a matrix, got shape {a.data.shape}")
    if not 0 <= start < stop <= a.data.shape[1]:
        raise DimensionError(f"column slice [{start}:{stop}] out of range for shape {a.data.shape}")
    out = _make(a.data[:, start:stop].copy(), (a,))
    if out.requires_grad:
        def bw():
            if a.grad is None:
                g = np.zeros_like(a.data)
                g[:, start:stop] = out.grad
                a.grad = g
            else:
                a.grad[:, start:stop] += out.grad
        out._backward = bw
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise DimensionError("concat_cols of zero parts")
    rows = parts[0].data.shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != rows:
            raise DimensionError(f"concat_cols row mismatch: {[q.data.shape for q in parts]}")
    out = _make(np.concatenate([p.data for p in parts], axis=1), (*parts,))
    if out.requires_grad:
        widths = [p.data.shape[1] for p in parts]
        def bw():
            off = 0
            for p, w in zip(parts, widths):
                if p.requires_grad:
                    _accum(p, out.grad[:, off:off + w])
                off += w
        out._backward = bw
    return out
