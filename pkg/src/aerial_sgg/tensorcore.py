"""Dense float64 matrices with a recording tape for reverse-mode gradients.

Only what the graph network needs: matmul, column concatenation, row
gather, row-vector bias add, elementwise activations, row softmax and a
fused softmax cross-entropy. No broadcasting: every op checks its shapes.

    W = Tensor(np.zeros((3, 2)), requires_grad=True)
    with Tape() as tape:
        loss = softmax_cross_entropy(matmul(X, W), targets)
    (gW,) = tape.backward(loss, [W])
"""
from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np


class Tensor:
    __slots__ = ("value", "requires_grad")

    def __init__(self, value, requires_grad: bool = False):
        value = np.array(value, dtype=np.float64)
        if value.ndim != 2:
            raise ValueError(f"Tensor must be 2-D, got shape {value.shape}")
        self.value = value
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_state = threading.local()


def _active_tape() -> Optional["Tape"]:
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Records ops executed inside its ``with`` block."""

    def __init__(self):
        self._nodes: list = []

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def _record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self._nodes.append((out, tuple(inputs), backward))

    def backward(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of the scalar ``loss`` with respect to ``params``."""
        if loss.shape != (1, 1):
            raise ValueError(f"loss must be a 1x1 tensor, got {loss.shape}")
        if not any(node[0] is loss for node in self._nodes):
            raise RuntimeError("loss was not produced on this tape; run the forward pass inside it first")
        grads = {id(loss): np.ones((1, 1))}
        # recording order is a topological order, so one reverse sweep suffices
        for out, inputs, fn in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for x, gx in zip(inputs, fn(g)):
                if gx is None or not x.requires_grad:
                    continue
                if id(x) in grads:
                    grads[id(x)] = grads[id(x)] + gx
                else:
                    grads[id(x)] = gx
        return [grads.get(id(p), np.zeros(p.shape)) for p in params]


def _emit(value: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise FloatingPointError("non-finite values produced")
    out = Tensor(value, requires_grad=any(x.requires_grad for x in inputs))
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape._record(out, inputs, backward)
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _emit(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def concat_cols(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"concat_cols row mismatch {a.shape} | {b.shape}")
    k = a.shape[1]
    return _emit(np.concatenate([a.value, b.value], axis=1), (a, b), lambda g: (g[:, :k], g[:, k:]))


def gather_rows(a, index: Sequence[int]) -> Tensor:
    """Rows of ``a`` picked by ``index`` (repeats allowed)."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.intp).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"row index out of range for {a.shape[0]} rows")
    n, m = a.shape

    def backward(g):
        ga = np.zeros((n, m))
        np.add.at(ga, idx, g)
        return (ga,)

    return _emit(a.value[idx].reshape(idx.size, m), (a,), backward)


def add_row(a, bias) -> Tensor:
    """``a`` plus a 1 x cols row vector added to every row."""
    a, bias = as_tensor(a), as_tensor(bias)
    if bias.shape != (1, a.shape[1]):
        raise ValueError(f"bias must have shape (1, {a.shape[1]}), got {bias.shape}")
    return _emit(a.value + bias.value, (a, bias), lambda g: (g, g.sum(axis=0, keepdims=True)))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return _emit(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.value)
    return _emit(y, (a,), lambda g: (g * (1.0 - y * y),))


def identity(a) -> Tensor:
    a = as_tensor(a)
    return _emit(a.value.copy(), (a,), lambda g: (g,))


ACTIVATIONS = {"relu": relu, "tanh": tanh, "identity": identity}


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def row_softmax(a) -> Tensor:
    a = as_tensor(a)
    if a.shape[1] == 0:
        raise ValueError("row_softmax needs at least one column")
    p = _softmax(a.value)

    def backward(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _emit(p, (a,), backward)


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _emit(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def _check_targets(targets, rows: int, classes: int) -> np.ndarray:
    t = np.asarray(targets, dtype=np.intp).reshape(-1)
    if t.size != rows:
        raise ValueError(f"expected {rows} targets, got {t.size}")
    if t.size and (t.min() < 0 or t.max() >= classes):
        raise ValueError(f"target index out of range for {classes} classes")
    return t


def softmax_cross_entropy(logits, targets) -> Tensor:
    """Mean over rows of ``-log softmax(logits)[row, target]`` (log-sum-exp form)."""
    logits = as_tensor(logits)
    n, c = logits.shape
    if n == 0:
        raise ValueError("cross-entropy over zero rows")
    t = _check_targets(targets, n, c)
    z = logits.value
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(n), t]))

    def backward(g):
        p = _softmax(z)
        p[np.arange(n), t] -= 1.0
        return (p * (g[0, 0] / n),)

    return _emit(np.array([[loss]]), (logits,), backward)


def cross_entropy(probs, targets) -> float:
    """Mean negative log-likelihood of row distributions (forward only)."""
    p = as_tensor(probs).value
    t = _check_targets(targets, p.shape[0], p.shape[1])
    return float(np.mean(-np.log(p[np.arange(p.shape[0]), t])))


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], learning_rate: float) -> None:
    """In-place ``p <- p - lr * g``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        p.value -= learning_rate * g
