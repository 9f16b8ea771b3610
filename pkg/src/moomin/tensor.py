"""Minimal dense reverse-mode autodiff on 2-D float64 arrays.

Every tensor is a matrix. Operations build a graph of ``Tensor`` nodes; calling
:func:`backward` on a scalar orders that graph topologically (the tape) and
pushes gradients from the loss back to the leaves.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, EmptyPoolError

__all__ = [
    "Tensor",
    "tensor",
    "parameter",
    "constant",
    "matmul",
    "const_matmul",
    "add",
    "scale",
    "relu",
    "sigmoid",
    "concat_cols",
    "slice_cols",
    "take_rows",
    "pool",
    "segment_pool",
    "dropout",
    "mean",
    "total",
    "binary_cross_entropy",
    "build_tape",
    "backward",
]

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """A matrix that optionally tracks gradients.

    ``grad`` is only kept for leaves (tensors without parents) that require
    gradients. Intermediate gradients live for the duration of one backward
    pass, so repeated backward calls accumulate cleanly into the leaves.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward_fn: Optional[BackwardFn] = None,
        op: str = "leaf",
    ):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got {arr.ndim}-D data")
        self.data = arr
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward_fn
        self.op = op
        self.grad = np.zeros_like(arr) if requires_grad and not parents else None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def zero_grad(self) -> None:
        if self.requires_grad and self.is_leaf:
            self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, factor: float) -> "Tensor":
        return scale(self, factor)

    __rmul__ = __mul__


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], fn: BackwardFn, op: str) -> Tensor:
    tracked = any(p.requires_grad for p in parents)
    if not tracked:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, parents=parents, backward_fn=fn, op=op)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    a_data, b_data = a.data, b.data

    def _backward(g: np.ndarray):
        ga = g @ b_data.T if a.requires_grad else None
        gb = a_data.T @ g if b.requires_grad else None
        return ga, gb

    return _result(a_data @ b_data, (a, b), _backward, "matmul")


def const_matmul(m, x: Tensor) -> Tensor:
    """Left-multiply ``x`` by a fixed matrix (dense array or scipy sparse)."""
    if m.shape[1] != x.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {tuple(m.shape)} @ {x.shape}")
    mt = m.T
    if sp.issparse(m):
        out = np.asarray((m @ x.data), dtype=np.float64)
    else:
        out = np.asarray(m, dtype=np.float64) @ x.data

    def _backward(g: np.ndarray):
        return (np.asarray(mt @ g, dtype=np.float64),)

    return _result(out, (x,), _backward, "const_matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a 1×n bias row added to every row of ``a``."""
    if a.shape == b.shape:
        def _backward(g: np.ndarray):
            return g, g

        return _result(a.data + b.data, (a, b), _backward, "add")
    if b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        def _backward_bias(g: np.ndarray):
            return g, g.sum(axis=0, keepdims=True)

        return _result(a.data + b.data, (a, b), _backward_bias, "add_bias")
    raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}")


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def _backward(g: np.ndarray):
        return (g * factor,)

    return _result(x.data * factor, (x,), _backward, "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0

    def _backward(g: np.ndarray):
        return (g * mask,)

    return _result(np.where(mask, x.data, 0.0), (x,), _backward, "relu")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)

    def _backward(g: np.ndarray):
        return (g * s * (1.0 - s),)

    return _result(s, (x,), _backward, "sigmoid")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ValueError("concat_cols needs at least one tensor")
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise DimensionError(
                f"concat_cols row mismatch: {[q.shape for q in parts]}"
            )
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def _backward(g: np.ndarray):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _result(np.hstack([p.data for p in parts]), tuple(parts), _backward, "concat_cols")


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= x.shape[1]:
        raise DimensionError(f"column slice [{start}:{stop}] outside {x.shape}")
    n = x.shape[1]

    def _backward(g: np.ndarray):
        full = np.zeros((g.shape[0], n))
        full[:, start:stop] = g
        return (full,)

    return _result(x.data[:, start:stop], (x,), _backward, "slice_cols")


def take_rows(x: Tensor, index: Sequence[int]) -> Tensor:
    """Gather rows by index; repeated indices accumulate gradient."""
    idx = np.asarray(index, dtype=np.intp)
    rows = x.shape[0]

    def _backward(g: np.ndarray):
        full = np.zeros((rows, g.shape[1]))
        np.add.at(full, idx, g)
        return (full,)

    return _result(x.data[idx], (x,), _backward, "take_rows")


def _pool_data(data: np.ndarray, kind: str) -> tuple[np.ndarray, np.ndarray | None]:
    if kind == "mean":
        return data.mean(axis=0, keepdims=True), None
    if kind == "max":
        arg = data.argmax(axis=0)
    elif kind == "min":
        arg = data.argmin(axis=0)
    else:
        raise ValueError(f"unknown pool kind {kind!r}")
    # argmax/argmin return the first attaining row, which is the tie rule.
    return data[arg, np.arange(data.shape[1])][None, :], arg


def pool(x: Tensor, kind: str) -> Tensor:
    """Column-wise mean, max or min over the rows of ``x``."""
    m, n = x.shape
    if m == 0:
        raise EmptyPoolError("cannot pool zero rows")
    out, arg = _pool_data(x.data, kind)

    def _backward(g: np.ndarray):
        if arg is None:
            return (np.repeat(g / m, m, axis=0),)
        full = np.zeros((m, n))
        full[arg, np.arange(n)] = g[0]
        return (full,)

    return _result(out, (x,), _backward, f"pool_{kind}")


def segment_pool(x: Tensor, offsets: Sequence[int], kind: str) -> Tensor:
    """Pool consecutive row segments ``x[offsets[i]:offsets[i+1]]`` into one row each."""
    offsets = np.asarray(offsets, dtype=np.intp)
    n = x.shape[1]
    if offsets[0] != 0 or offsets[-1] != x.shape[0]:
        raise DimensionError(f"segment offsets do not cover {x.shape[0]} rows")
    sizes = np.diff(offsets)
    if (sizes <= 0).any():
        raise EmptyPoolError("cannot pool an empty segment")
    starts = offsets[:-1]
    if kind == "mean":
        out = np.add.reduceat(x.data, starts, axis=0) / sizes[:, None]

        def _backward(g: np.ndarray):
            return (np.repeat(g / sizes[:, None], sizes, axis=0),)

        return _result(out, (x,), _backward, "segment_mean")
    if kind not in ("max", "min"):
        raise ValueError(f"unknown pool kind {kind!r}")
    out = np.empty((len(sizes), n))
    winners = np.empty((len(sizes), n), dtype=np.intp)
    cols = np.arange(n)
    for i, (lo, hi) in enumerate(zip(offsets[:-1], offsets[1:])):
        seg = x.data[lo:hi]
        arg = seg.argmax(axis=0) if kind == "max" else seg.argmin(axis=0)
        winners[i] = lo + arg
        out[i] = seg[arg, cols]
    rows = x.shape[0]

    def _backward_ext(g: np.ndarray):
        full = np.zeros((rows, n))
        for i in range(len(sizes)):
            full[winners[i], cols] += g[i]
        return (full,)

    return _result(out, (x,), _backward_ext, f"segment_{kind}")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: kept entries are scaled by ``1/(1-p)`` while training."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)

    def _backward(g: np.ndarray):
        return (g * keep,)

    return _result(x.data * keep, (x,), _backward, "dropout")


def total(x: Tensor) -> Tensor:
    shape = x.shape

    def _backward(g: np.ndarray):
        return (np.full(shape, g[0, 0]),)

    return _result(np.array([[x.data.sum()]]), (x,), _backward, "sum")


def mean(x: Tensor) -> Tensor:
    shape = x.shape
    n = x.data.size

    def _backward(g: np.ndarray):
        return (np.full(shape, g[0, 0] / n),)

    return _result(np.array([[x.data.mean()]]), (x,), _backward, "mean")


def binary_cross_entropy(p: Tensor, y, eps: float = 1e-12) -> Tensor:
    """Per-entry ``-[y log p + (1-y) log(1-p)]`` with ``p`` clamped to ``[eps, 1-eps]``."""
    y = np.asarray(y, dtype=np.float64).reshape(p.shape)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    pc = np.clip(p.data, eps, 1.0 - eps)
    loss = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))

    def _backward(g: np.ndarray):
        return (g * (-y / pc + (1.0 - y) / (1.0 - pc)),)

    return _result(loss, (p,), _backward, "bce")


def build_tape(root: Tensor) -> list[Tensor]:
    """Tracked nodes reachable from ``root`` in topological order (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate ``d loss / d leaf`` into every reachable leaf's ``grad``."""
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = build_tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
