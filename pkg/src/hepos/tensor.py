"""Dense float64 tensors with a tape-based reverse-mode differentiator.

Only the primitives needed by the attention kernels and the toy seq2seq
model are provided. Every primitive registers a node on the active
:class:`Tape` when at least one input requires a gradient; anything built
from primitives is differentiable by composition.

Typical use::

    x = Tensor(np.ones((2, 3)), requires_grad=True)
    with Tape() as tape:
        loss = (x * x).sum()
    backward(tape, loss)
    x.grad  # 2 * x
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, EmptyRowError, NumericError


class Tensor:
    """An immutable float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "grad", "requires_grad", "tape_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor data must be finite")
        arr.setflags(write=False)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a constant")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mul(tsum(self), 1.0 / self.size)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def _not_scalar(t: Tensor) -> float:
    raise ContractError(f"expected a single-element tensor, got shape {t.shape}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Computation record
# ---------------------------------------------------------------------------


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]

    @property
    def input_ids(self) -> tuple[int | None, ...]:
        return tuple(t.tape_id for t in self.inputs)

    @property
    def output_id(self) -> int | None:
        return self.output.tape_id


@dataclass
class Tape:
    """Ordered record of primitive applications (the computation record).

    Nodes are appended in execution order, so every input was produced
    before its consumer. Use as a context manager to make it the active
    record; nesting is allowed and the innermost tape records.
    """

    nodes: list[Node] = field(default_factory=list)
    leaves: dict[int, Tensor] = field(default_factory=dict)
    consumed: bool = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def record(self, op, inputs, output, backward_fn) -> None:
        if self.consumed:
            raise ContractError("computation record was already consumed by backward()")
        for t in inputs:
            if t.requires_grad and t.tape_id is None:
                self.leaves[id(t)] = t
        output.tape_id = len(self.nodes)
        self.nodes.append(Node(op, tuple(inputs), output, backward_fn))


ComputationRecord = Tape

_ACTIVE: list[Tape] = []


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def _emit(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{op} produced non-finite values")
    tape = active_tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=tracked)
    if tracked:
        tape.record(op, inputs, result, backward_fn)
    return result


def backward(record: Tape, loss: Tensor, wrt: Sequence[Tensor] = ()) -> dict[int, np.ndarray]:
    """Populate ``.grad`` on every leaf reached by ``record`` (and on ``wrt``).

    Leaves that the loss does not depend on receive zeros. The record is
    consumed: calling this twice on the same record raises ContractError.
    """
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    if record.consumed:
        raise ContractError("computation record was already consumed")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(record.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    leaves = dict(record.leaves)
    for t in wrt:
        leaves[id(t)] = t
    for key, leaf in leaves.items():
        g = grads.get(key)
        leaf.grad = np.zeros_like(leaf.data) if g is None else g
    record.nodes.clear()
    record.consumed = True
    return {key: leaf.grad for key, leaf in leaves.items()}


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >= 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit("matmul", out, (a, b), grad_fn)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _emit("add", out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _emit(
        "mul",
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def tsum(a: Tensor) -> Tensor:
    return _emit("sum", np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _emit("relu", np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _emit("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _emit("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise DimensionError("transpose needs a >= 2-D tensor")
    return _emit("transpose", np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit("permute", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather slices of ``a`` along ``axis``; duplicates accumulate on backward.

    With ``axis=0`` on a 2-D table this is an embedding lookup.
    """
    idx = np.asarray(indices, dtype=np.intp).reshape(-1)
    axis = axis % a.ndim
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise DimensionError(f"take index out of range for axis {axis} of size {a.shape[axis]}")
    out = np.take(a.data, idx, axis=axis)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)

    return _emit("take", out, (a,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _emit("concat", out, tuple(tensors), lambda g: tuple(np.split(g, cuts, axis=axis)))


def _mask_arrays(mask, shape) -> tuple[np.ndarray, np.ndarray | None]:
    if mask is None:
        return np.ones(shape[-2:], dtype=bool), None
    if isinstance(mask, np.ndarray):
        return mask.astype(bool), None
    return mask.allowed, getattr(mask, "weights", None)


def softmax_masked(scores: Tensor, mask=None) -> Tensor:
    """Row softmax over the last axis, restricted to each row's attended keys.

    ``mask`` is an AttentionMask (or a boolean array) over the last two axes
    and broadcasts across any leading axes. Masked-out entries are excluded
    before exponentiation, so they are exactly zero. Soft-mask weights
    multiply the exponentials before renormalisation.
    """
    allowed, weights = _mask_arrays(mask, scores.shape)
    if allowed.shape != scores.shape[-2:]:
        raise DimensionError(f"mask shape {allowed.shape} does not match scores {scores.shape}")
    empty = np.flatnonzero(~allowed.any(axis=-1))
    if empty.size:
        raise EmptyRowError(empty.tolist())
    s = scores.data
    row_max = np.max(np.where(allowed, s, -np.inf), axis=-1, keepdims=True)
    e = np.zeros_like(s)
    np.exp(s - row_max, out=e, where=np.broadcast_to(allowed, s.shape))
    if weights is not None:
        e = e * weights
    total = e.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise EmptyRowError(np.flatnonzero((total <= 0).reshape(-1)).tolist())
    y = e / total

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit("softmax_masked", y, (scores,), grad_fn)


def softmax(scores: Tensor) -> Tensor:
    return softmax_masked(scores, None)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under row-softmax ``logits``."""
    t = np.asarray(targets, dtype=np.intp).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != t.size:
        raise DimensionError(f"cross_entropy expects (N, V) logits for {t.size} targets, got {logits.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logz
    rows = np.arange(t.size)
    loss = -logp[rows, t].mean()

    def grad_fn(g):
        p = np.exp(logp)
        p[rows, t] -= 1.0
        return (p * (g / t.size),)

    return _emit("cross_entropy", np.array(loss), (logits,), grad_fn)


def log_softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def analytic_grad(f: Callable[[Tensor], Tensor], x) -> np.ndarray:
    leaf = Tensor(x.data if isinstance(x, Tensor) else x, requires_grad=True)
    with Tape() as tape:
        y = f(leaf)
    if y.size != 1:
        raise ContractError(f"function must return a scalar, got shape {y.shape}")
    backward(tape, y, wrt=[leaf])
    return leaf.grad


def numeric_grad(f: Callable[[Tensor], Tensor], x, step: float = 1e-5) -> np.ndarray:
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(Tensor(base)).item()
        flat[i] = orig - step
        lo = f(Tensor(base)).item()
        flat[i] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NumericError(f"non-finite evaluation at element {i}")
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def finite_difference_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-5) -> float:
    """Max over elements of |analytic - numeric| / max(1, |analytic|, |numeric|)."""
    if not step > 0:
        raise ValueError("step must be positive")
    a = analytic_grad(f, x)
    n = numeric_grad(f, x, step)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
