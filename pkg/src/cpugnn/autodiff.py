"""A small reverse-mode tape over dense float64 matrices.

Every primitive accepts either a :class:`Node` (a value recorded on a tape) or a
plain ndarray. When none of the inputs is a node the primitive just computes the
value and returns an ndarray, so the same propagation code serves training
(recorded) and diagnostics (detached).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .graph import SparseMatrixCSR, spmm


class Parameter:
    """A trainable array plus its gradient accumulator."""

    def __init__(self, value, name: str = "", frozen: bool = False):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name
        self.frozen = frozen

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Node:
    __slots__ = ("value", "tape", "param")

    def __init__(self, value: np.ndarray, tape: Tape, param: Parameter | None = None):
        self.value = value
        self.tape = tape
        self.param = param

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape})"


@dataclass
class Record:
    out: Node
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered log of primitive applications; backward walks it in reverse."""

    def __init__(self):
        self.records: list[Record] = []
        self.leaves: list[Node] = []

    def watch(self, p: Parameter) -> Node:
        node = Node(p.value, self, param=p)
        self.leaves.append(node)
        return node

    def constant(self, value) -> Node:
        return Node(np.asarray(value, dtype=np.float64), self)

    def record(self, value, inputs, backward) -> Node:
        out = Node(value, self)
        self.records.append(Record(out, tuple(inputs), backward))
        return out

    def backward(self, loss: Node) -> None:
        """Accumulate d(loss)/d(param) into every watched parameter's ``grad``."""
        if loss.tape is not self:
            raise ValueError("loss node belongs to a different tape")
        if loss.value.size != 1:
            raise ValueError(f"backward needs a scalar root, got shape {loss.value.shape}")
        grads = {id(loss): np.ones_like(loss.value)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not isinstance(inp, Node):
                    continue
                k = id(inp)
                if k in grads:
                    grads[k] = grads[k] + gi
                else:
                    grads[k] = gi
        for leaf in self.leaves:
            g = grads.get(id(leaf))
            if g is not None:
                leaf.param.grad += g


def backward(tape: Tape, loss: Node) -> None:
    tape.backward(loss)


def value(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _tape(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Node):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("inputs recorded on different tapes")
    return tape


def matmul(a, b):
    A, B = value(a), value(b)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {A.shape} @ {B.shape}")
    out = A @ B
    tape = _tape(a, b)
    if tape is None:
        return out
    return tape.record(out, (a, b), lambda g: (g @ B.T, A.T @ g))


def spmm_diff(S: SparseMatrixCSR, h):
    H = value(h)
    out = spmm(S, H)
    tape = _tape(h)
    if tape is None:
        return out
    return tape.record(out, (h,), lambda g: (spmm(S.T, g),))


def add_scaled(x, y, a: float = 1.0, b: float = 1.0):
    X, Y = value(x), value(y)
    if X.shape != Y.shape:
        raise ValueError(f"add_scaled shape mismatch: {X.shape} vs {Y.shape}")
    out = a * X + b * Y
    tape = _tape(x, y)
    if tape is None:
        return out
    return tape.record(out, (x, y), lambda g: (a * g, b * g))


def add(x, y):
    return add_scaled(x, y, 1.0, 1.0)


def scale(x, a: float):
    X = value(x)
    out = a * X
    tape = _tape(x)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g: (a * g,))


def add_bias(x, b):
    """Row-broadcast ``x + b`` with ``b`` of shape (1, n_cols) or (n_cols,)."""
    X, Bv = value(x), value(b)
    out = X + Bv.reshape(1, -1)
    tape = _tape(x, b)
    if tape is None:
        return out
    return tape.record(out, (x, b), lambda g: (g, g.sum(axis=0).reshape(Bv.shape)))


def coef_scale(x, coeffs, k: int):
    """``coeffs[k] * x`` where ``coeffs`` is a learnable vector."""
    X, c = value(x), value(coeffs)
    out = c[k] * X

    def bw(g):
        gc = np.zeros_like(c)
        gc[k] = np.sum(g * X)
        return c[k] * g, gc

    tape = _tape(x, coeffs)
    if tape is None:
        return out
    return tape.record(out, (x, coeffs), bw)


def relu(x):
    X = value(x)
    mask = X > 0
    out = np.where(mask, X, 0.0)
    tape = _tape(x)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g: (g * mask,))


def dropout(x, rate: float, rng_seed: int, training: bool = True):
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0.0:
        return x
    X = value(x)
    keep = np.random.default_rng(rng_seed).random(X.shape) >= rate
    mult = keep / (1.0 - rate)
    out = X * mult
    tape = _tape(x)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g: (g * mult,))


def row_l2_clip(z, t: float):
    """Scale every row to norm ``min(||row||, t)``; rows at the boundary count as unclipped."""
    if t < 0:
        raise ValueError("clip threshold must be nonnegative")
    Z = value(z)
    norms = np.sqrt(np.sum(Z * Z, axis=1, keepdims=True))
    clipped = norms > t
    safe = np.where(clipped, norms, 1.0)
    factor = np.where(clipped, t / safe, 1.0)
    out = Z * factor

    def bw(g):
        # t/|z| (I - z z^T/|z|^2) on clipped rows
        proj = np.sum(Z * g, axis=1, keepdims=True) / (safe * safe)
        gc = factor * (g - Z * proj)
        return (np.where(clipped, gc, g),)

    tape = _tape(z)
    if tape is None:
        return out
    return tape.record(out, (z,), bw)


def entry_clip(z, t: float):
    """Entrywise projection onto [-t, t]; the dual step of an entrywise l1 penalty."""
    if t < 0:
        raise ValueError("clip threshold must be nonnegative")
    Z = value(z)
    inside = np.abs(Z) <= t
    out = np.clip(Z, -t, t)
    tape = _tape(z)
    if tape is None:
        return out
    return tape.record(out, (z,), lambda g: (g * inside,))


def total(x):
    X = value(x)
    out = np.asarray(X.sum())
    tape = _tape(x)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g: (np.full_like(X, float(g)),))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def masked_softmax_cross_entropy(logits, labels, mask):
    """Mean of ``-log softmax(logits)[label]`` over the rows selected by ``mask``."""
    Z = value(logits)
    labels = np.asarray(labels, dtype=np.int64)
    idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask, dtype=np.int64)
    if len(idx) == 0:
        raise ValueError("empty mask")
    y = labels[idx]
    if y.min() < 0 or y.max() >= Z.shape[1]:
        raise ValueError("label out of range on masked rows")
    logp = log_softmax(Z[idx])
    out = np.asarray(-logp[np.arange(len(idx)), y].mean())

    def bw(g):
        d = np.exp(logp)
        d[np.arange(len(idx)), y] -= 1.0
        full = np.zeros_like(Z)
        full[idx] = d * (float(g) / len(idx))
        return (full,)

    tape = _tape(logits)
    if tape is None:
        return out
    return tape.record(out, (logits,), bw)


def numerical_grad(fn: Callable[[], float], p: Parameter, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``fn`` with respect to every entry of ``p.value``."""
    g = np.zeros_like(p.value)
    flat = p.value.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(build_loss: Callable[[Tape], Node], params: Sequence[Parameter],
                    h: float = 1e-5) -> dict[str, float]:
    """Compare tape gradients of ``build_loss`` against central differences.

    ``build_loss`` receives a fresh tape, must watch ``params`` on it and return a
    scalar node. Returns the norm-wise relative error per parameter.
    """
    for p in params:
        p.zero_grad()
    tape = Tape()
    tape.backward(build_loss(tape))
    analytic = [p.grad.copy() for p in params]

    def fn():
        return float(value(build_loss(Tape())))

    errors = {}
    for i, (p, ga) in enumerate(zip(params, analytic)):
        errors[p.name or f"param{i}"] = relative_error(numerical_grad(fn, p, h), ga)
    return errors
