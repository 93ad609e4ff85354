"""Dense float64 tensors with reverse-mode automatic differentiation.

Implements the small set of differentiable primitives the span model and the
distillation objective need: broadcast arithmetic, matmul, temperature
softmax, KL divergence, cross entropy, layer norm, dropout and embedding
lookup, plus SGD/Adam parameter updates.  Graphs are built define-by-run:
every op records its parents and a backward closure on the output tensor,
and ``backward()`` on a scalar loss replays the closures in reverse
topological order, accumulating gradients additively.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

# Probabilities are clamped here before entering a log.
LOG_CLAMP = 1e-12

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Tensor:
    """Rank <= 3 float64 array, optionally tracked for gradients.

    ``grad`` is allocated (zeros) exactly when ``requires_grad`` is true and
    accumulates additively: across multiple uses of the tensor inside one
    graph and across repeated ``backward()`` calls.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ValueError(f"rank-{arr.ndim} tensor not supported (max rank 3)")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Constant copy that no gradient will ever flow into."""
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self) -> None:
        backward(self)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    tracked = tuple(p for p in parents if p.requires_grad)
    if tracked:
        out.requires_grad = True
        out.grad = np.zeros_like(data)
        out._parents = tracked
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` back down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward_fn(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.data.shape)

    return _result(data, (a, b), backward_fn)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    data = -a.data

    def backward_fn(g):
        if a.requires_grad:
            a.grad -= g

    return _result(data, (a,), backward_fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward_fn(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.data.shape)

    return _result(data, (a, b), backward_fn)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    data = ad @ bd

    def backward_fn(g):
        if ad.ndim == 2 and bd.ndim == 2:
            if a.requires_grad:
                a.grad += g @ bd.T
            if b.requires_grad:
                b.grad += ad.T @ g
        elif ad.ndim == 1 and bd.ndim == 2:
            if a.requires_grad:
                a.grad += bd @ g
            if b.requires_grad:
                b.grad += np.outer(ad, g)
        elif ad.ndim == 2 and bd.ndim == 1:
            if a.requires_grad:
                a.grad += np.outer(g, bd)
            if b.requires_grad:
                b.grad += ad.T @ g
        else:  # 1-D dot product
            if a.requires_grad:
                a.grad += g * bd
            if b.requires_grad:
                b.grad += g * ad

    return _result(data, (a, b), backward_fn)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError("transpose expects a rank-2 tensor")
    data = a.data.T

    def backward_fn(g):
        if a.requires_grad:
            a.grad += g.T

    return _result(data, (a,), backward_fn)


def tsum(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum())

    def backward_fn(g):
        if a.requires_grad:
            a.grad += g

    return _result(data, (a,), backward_fn)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    data = np.asarray(a.data.mean())

    def backward_fn(g):
        if a.requires_grad:
            a.grad += g / n

    return _result(data, (a,), backward_fn)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU; smooth, so finite-difference checks behave."""
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def backward_fn(g):
        if a.requires_grad:
            dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)
            a.grad += g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)

    return _result(data, (a,), backward_fn)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout. rate=0 is the identity (same tensor, no op recorded)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    data = a.data * mask

    def backward_fn(g):
        if a.requires_grad:
            a.grad += g * mask

    return _result(data, (a,), backward_fn)


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Row gather from a (vocab, dim) table; backward scatter-adds."""
    idx = np.asarray(ids, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError("ids must be a flat sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ValueError("token id out of range for embedding table")
    data = table.data[idx]

    def backward_fn(g):
        if table.requires_grad:
            np.add.at(table.grad, idx, g)

    return _result(data, (table,), backward_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    data = xhat * gain.data + bias.data

    def backward_fn(g):
        lead = tuple(range(g.ndim - 1))
        if gain.requires_grad:
            gain.grad += (g * xhat).sum(axis=lead)
        if bias.requires_grad:
            bias.grad += g.sum(axis=lead)
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x.grad += inv * (gx - m1 - xhat * m2)

    return _result(data, (x, gain, bias), backward_fn)


# ---------------------------------------------------------------------------
# probability kernels


def softmax_temp(logits: Tensor, tau: float) -> Tensor:
    """Temperature softmax over the last axis (rank-1, or rank-2 rows).

    Computed in the max-subtracted stable form; rows sum to 1 within 1e-9.
    """
    if not math.isfinite(tau) or tau <= 0:
        raise ValueError(f"temperature must be a positive finite number, got {tau}")
    x = logits.data
    if x.ndim not in (1, 2):
        raise ValueError("softmax_temp expects a rank-1 or rank-2 tensor")
    if not np.isfinite(x).all():
        raise ValueError("softmax_temp logits must be finite")
    z = x / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        if logits.requires_grad:
            dot = (g * p).sum(axis=-1, keepdims=True)
            logits.grad += p * (g - dot) / tau

    return _result(p, (logits,), backward_fn)


def _check_rows_normalized(arr: np.ndarray, name: str) -> None:
    sums = arr.sum(axis=-1)
    if not np.all(np.abs(sums - 1.0) <= 1e-6):
        raise ValueError(f"{name} rows must sum to 1 within 1e-6")


def kl_div(p: Tensor, q: Tensor) -> Tensor:
    """Mean over rows of sum_i p_i * ln(p_i / q_i).

    Both arguments are probability rows.  Values are clamped at 1e-12 before
    the log; entries with p_i = 0 contribute exactly 0.  Differentiable with
    respect to both arguments.
    """
    pd, qd = p.data, q.data
    if pd.shape != qd.shape:
        raise ValueError(f"kl_div shape mismatch: {pd.shape} vs {qd.shape}")
    if pd.ndim not in (1, 2):
        raise ValueError("kl_div expects rank-1 or rank-2 tensors")
    _check_rows_normalized(pd, "p")
    _check_rows_normalized(qd, "q")

    pc = np.maximum(pd, LOG_CLAMP)
    qc = np.maximum(qd, LOG_CLAMP)
    logratio = np.log(pc) - np.log(qc)
    mask = pd > 0
    terms = np.where(mask, pd * logratio, 0.0)
    n_rows = pd.shape[0] if pd.ndim == 2 else 1
    data = np.asarray(terms.sum() / n_rows)

    def backward_fn(g):
        gf = float(g) / n_rows
        if p.requires_grad:
            p.grad += gf * np.where(mask, logratio + (pd > LOG_CLAMP), 0.0)
        if q.requires_grad:
            q.grad += gf * np.where(mask & (qd > LOG_CLAMP), -pd / qc, 0.0)

    return _result(data, (p, q), backward_fn)


def cross_entropy(logits: Tensor, target_index) -> Tensor:
    """Mean over rows of -log_softmax(logits)[target], via stable log-sum-exp.

    Accepts a rank-1 tensor with an int target, or rank-2 rows with one
    target per row.
    """
    x = logits.data
    if x.ndim == 1:
        rows = x[None, :]
        targets = np.asarray([int(target_index)], dtype=np.intp)
    elif x.ndim == 2:
        rows = x
        targets = np.asarray(
            [int(t) for t in np.atleast_1d(target_index)], dtype=np.intp
        )
        if targets.shape[0] != rows.shape[0]:
            raise ValueError("one target index per row required")
    else:
        raise ValueError("cross_entropy expects a rank-1 or rank-2 tensor")
    n, width = rows.shape
    if targets.min() < 0 or targets.max() >= width:
        raise ValueError(f"target index out of range [0, {width})")

    m = rows.max(axis=1, keepdims=True)
    e = np.exp(rows - m)
    lse = np.log(e.sum(axis=1)) + m[:, 0]
    data = np.asarray((lse - rows[np.arange(n), targets]).mean())

    def backward_fn(g):
        if logits.requires_grad:
            soft = e / e.sum(axis=1, keepdims=True)
            soft[np.arange(n), targets] -= 1.0
            logits.grad += (float(g) / n) * soft.reshape(x.shape)

    return _result(data, (logits,), backward_fn)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Populate gradients of everything reachable from a scalar loss.

    Interior-node gradients are recomputed fresh on every call; leaf
    gradients accumulate across calls.
    """
    if not isinstance(loss, Tensor) or loss.data.ndim != 0:
        raise ValueError("backward requires a scalar loss tensor")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    # Interior grads are scratch space for this pass; leaves keep history.
    for node in topo:
        if node._backward is not None:
            node.grad[...] = 0.0
    loss.grad += 1.0
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# optimizers


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def sgd_step(params: Iterable[Tensor], lr: float) -> None:
    """In-place vanilla gradient descent update."""
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    for p in params:
        if p.grad is None:
            raise RuntimeError("sgd_step: parameter has no gradient buffer")
        p.data -= lr * p.grad


class Adam:
    """Adam with bias correction; moment state is keyed to parameter identity."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._t = 0
        self._m = {id(p): np.zeros_like(p.data) for p in self.params}
        self._v = {id(p): np.zeros_like(p.data) for p in self.params}

    def step(self) -> None:
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self._t
        bc2 = 1.0 - b2**self._t
        for p in self.params:
            if p.grad is None:
                raise RuntimeError("Adam.step: parameter has no gradient buffer")
            g = p.grad
            m = self._m[id(p)]
            v = self._v[id(p)]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(opt: Adam) -> None:
    """Alias for one Adam update on the optimizer's parameter set."""
    opt.step()
