"""A small reverse-mode automatic differentiation engine on numpy arrays.

Only what the VAEs in this package need: dense float64 arrays of rank <= 2,
elementwise maths, matrix products, reductions, and the two piecewise
primitives used by covering-map projections (``mod_periodic`` and
``select_by_threshold``).  Broadcasting is limited to adding a bias vector
to every row of a matrix, which keeps every backward rule easy to audit.

Example::

    W = Parameter(np.ones((3, 2)), name="W")
    x = Tensor(np.arange(6.0).reshape(2, 3))
    loss = mean(sigmoid(matmul(x, W)))
    backward(loss)
    W.grad  # dloss/dW
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


class Tensor:
    """A node of the computation graph."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "requires_grad")

    def __init__(self, value, parents: Sequence["Tensor"] = (), backward_fn=None, op: str = "const",
                 requires_grad: bool | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = backward_fn
        self.op = op
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add_const(neg(self), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        if isinstance(key, tuple) and len(key) == 2 and key[0] == slice(None) and isinstance(key[1], int):
            return column(self, key[1])
        raise TypeError("only column selection t[:, k] is supported")


class Parameter(Tensor):
    """A trainable leaf with Adam moment estimates."""

    __slots__ = ("name", "adam_m", "adam_v", "step_count")

    def __init__(self, value, name: str = "param"):
        super().__init__(value, op="param", requires_grad=True)
        self.name = name
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step_count = 0
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.shape})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward_fn, op) -> Tensor:
    return Tensor(value, parents, backward_fn, op)


# ---------------------------------------------------------------- primitives

def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def back(g):
        return g @ b.value.T, a.value.T @ g

    return _node(a.value @ b.value, (a, b), back, "matmul")


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may also be a bias vector added to every row."""
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return add_const(a, b)
    if not isinstance(a, Tensor) and np.ndim(a) == 0:
        return add_const(b, a)
    a, b = _t(a), _t(b)
    if a.shape == b.shape:
        return _node(a.value + b.value, (a, b), lambda g: (g, g), "add")
    if a.value.ndim == 2 and b.value.ndim == 1 and a.shape[1] == b.shape[0]:
        return _node(a.value + b.value, (a, b), lambda g: (g, g.sum(axis=0)), "add_bias")
    raise ShapeError(f"add: incompatible shapes {a.shape} + {b.shape}")


def add_const(a, c: float) -> Tensor:
    a = _t(a)
    return _node(a.value + c, (a,), lambda g: (g,), "add_const")


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return add_const(a, -b)
    return add(a, neg(b))


def neg(a) -> Tensor:
    a = _t(a)
    return _node(-a.value, (a,), lambda g: (-g,), "neg")


def scale(a, c: float) -> Tensor:
    a = _t(a)
    c = float(c)
    return _node(c * a.value, (a,), lambda g: (c * g,), "scale")


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes differ {a.shape} * {b.shape}")
    return _node(a.value * b.value, (a, b), lambda g: (g * b.value, g * a.value), "mul")


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = _t(a)
    pos = a.value > 0
    return _node(np.where(pos, a.value, slope * a.value), (a,),
                 lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _t(a)
    s = _sigmoid(a.value)
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softplus(a) -> Tensor:
    a = _t(a)
    x = a.value
    return _node(np.logaddexp(0.0, x), (a,), lambda g: (g * _sigmoid(x),), "softplus")


def log(a) -> Tensor:
    a = _t(a)
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def exp(a) -> Tensor:
    a = _t(a)
    e = np.exp(a.value)
    return _node(e, (a,), lambda g: (g * e,), "exp")


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = _t(a)
    shape = a.shape

    def back(g):
        if axis is None:
            return (np.full(shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(np.sum(a.value, axis=axis), (a,), back, "sum")


def mean(a, axis: int | None = None) -> Tensor:
    a = _t(a)
    n = a.value.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def bce_with_logits(logits, targets) -> Tensor:
    """Elementwise Bernoulli negative log-likelihood of ``targets`` given logits."""
    logits = _t(logits)
    y = np.asarray(targets.value if isinstance(targets, Tensor) else targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: target shape {y.shape} != logits {logits.shape}")
    x = logits.value
    val = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    return _node(val, (logits,), lambda g: (g * (_sigmoid(x) - y),), "bce_with_logits")


def mod_periodic(a, period: float) -> Tensor:
    """``a mod period`` in ``[0, period)``; derivative 1 everywhere."""
    a = _t(a)
    r = np.mod(a.value, period)
    r = np.where(r >= period, 0.0, r)
    return _node(r, (a,), lambda g: (g,), "mod_periodic")


def select_by_threshold(cond, threshold: float, if_true, if_false) -> Tensor:
    """``where(cond >= threshold, if_true, if_false)``.

    The condition is treated as a constant; the gradient flows only into the
    branch that was taken for each element.
    """
    c = cond.value if isinstance(cond, Tensor) else np.asarray(cond, dtype=np.float64)
    a, b = _t(if_true), _t(if_false)
    if not (a.shape == b.shape == c.shape):
        raise ShapeError("select_by_threshold: operand shapes differ")
    take = c >= threshold
    return _node(np.where(take, a.value, b.value), (a, b),
                 lambda g: (np.where(take, g, 0.0), np.where(take, 0.0, g)), "select_by_threshold")


def column(a, k: int) -> Tensor:
    a = _t(a)
    if a.value.ndim != 2:
        raise ShapeError("column: expects a matrix")
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[:, k] = g
        return (out,)

    return _node(a.value[:, k], (a,), back, "column")


def stack_columns(cols: Sequence[Tensor]) -> Tensor:
    cols = [_t(c) for c in cols]
    if not cols or any(c.value.ndim != 1 or c.shape != cols[0].shape for c in cols):
        raise ShapeError("stack_columns: expects equally long vectors")
    return _node(np.stack([c.value for c in cols], axis=1), cols,
                 lambda g: tuple(g[:, k] for k in range(len(cols))), "stack_columns")


# ----------------------------------------------------------------- backward

def _topological(loss: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate ``d loss / d p`` into ``p.grad`` for every reachable Parameter.

    Intermediate gradients live only for the duration of the call, so the
    same graph can be differentiated again.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = node.grad + g
            continue
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# --------------------------------------------------------------- optimizers

def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def adam_step(params: Iterable[Parameter], lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; gradients are reset to zero afterwards."""
    params = list(params)
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(f"non-finite gradient in parameter {p.name!r}")
    b1, b2 = betas
    for p in params:
        p.step_count += 1
        p.adam_m = b1 * p.adam_m + (1.0 - b1) * p.grad
        p.adam_v = b2 * p.adam_v + (1.0 - b2) * p.grad * p.grad
        m_hat = p.adam_m / (1.0 - b1 ** p.step_count)
        v_hat = p.adam_v / (1.0 - b2 ** p.step_count)
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + eps)
        p.zero_grad()


@dataclass
class PlateauState:
    """Learning-rate plateau scheduler in ``min`` mode.

    The rate is multiplied by ``factor`` once ``patience`` consecutive
    evaluations fail to strictly improve on the best metric seen; the
    counter then starts over.
    """

    lr: float
    factor: float = 0.99
    patience: int = 10
    best: float = math.inf
    num_bad: int = 0
    reductions: list[int] = field(default_factory=list)
    evaluations: int = 0


def reduce_lr_on_plateau(state: PlateauState, metric: float) -> float:
    if not math.isfinite(metric):
        raise ValueError("plateau scheduler needs a finite metric")
    state.evaluations += 1
    if metric < state.best:
        state.best = metric
        state.num_bad = 0
    else:
        state.num_bad += 1
    if state.num_bad >= state.patience:
        state.lr *= state.factor
        state.num_bad = 0
        state.reductions.append(state.evaluations)
    return state.lr
