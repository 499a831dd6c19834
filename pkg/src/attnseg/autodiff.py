"""Dense reverse-mode automatic differentiation over 2-D float64 arrays.

Every value in the graph is a rank-2 matrix; scalars are 1x1. Each primitive
records a closure that propagates the output adjoint to its parents, and
``backward`` replays those closures in reverse topological order. The
traversal order is fixed by graph construction order, so gradient
accumulation is bit-reproducible for a given seed.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import GraphError, NumericError

SMOOTH_ABS_EPS = 1e-3


def _as_matrix(value) -> np.ndarray:
    a = np.asarray(value, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise GraphError(f"rank-2 values only, got shape {a.shape}")
    return a


class Tensor:
    """A node in the computation graph: a matrix value plus a gradient slot."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents: tuple = (), backward: Callable | None = None):
        self.value = _as_matrix(value)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def is_scalar(self) -> bool:
        return self.value.shape == (1, 1)

    def item(self) -> float:
        if not self.is_scalar():
            raise GraphError(f"item() on non-scalar of shape {self.shape}")
        return float(self.value[0, 0])

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    # Operator sugar used by the model code; floats become constants.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def constant(value) -> Tensor:
    """A leaf node that never receives a gradient closure."""
    return Tensor(value)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _check_finite(name: str, value: np.ndarray) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite values produced by '{name}'")


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape[1] != b.value.shape[0]:
        raise GraphError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = Tensor(a.value @ b.value, (a, b))

    def backward(g: np.ndarray) -> None:
        a.accumulate(g @ b.value.T)
        b.accumulate(a.value.T @ g)

    out._backward = backward
    return out


def _broadcast_ok(primary: tuple[int, int], other: tuple[int, int]) -> bool:
    if primary == other:
        return True
    if other == (1, 1):
        return True
    if other == (1, primary[1]):  # row vector over rows
        return True
    if other == (primary[0], 1):  # column vector over columns
        return True
    return False


def _reduce_to(shape: tuple[int, int], g: np.ndarray) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == (1, 1):
        return g.sum().reshape(1, 1)
    if shape == (1, g.shape[1]):
        return g.sum(axis=0, keepdims=True)
    if shape == (g.shape[0], 1):
        return g.sum(axis=1, keepdims=True)
    raise GraphError(f"cannot reduce gradient {g.shape} to {shape}")


def _elementwise_shapes(op: str, a: Tensor, b: Tensor) -> tuple[int, int]:
    if _broadcast_ok(a.shape, b.shape):
        return a.shape
    if _broadcast_ok(b.shape, a.shape):
        return b.shape
    raise GraphError(f"{op}: shapes {a.shape} and {b.shape} do not conform")


def add(a: Tensor, b: Tensor) -> Tensor:
    _elementwise_shapes("add", a, b)
    out = Tensor(a.value + b.value, (a, b))

    def backward(g: np.ndarray) -> None:
        a.accumulate(_reduce_to(a.shape, g))
        b.accumulate(_reduce_to(b.shape, g))

    out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _elementwise_shapes("sub", a, b)
    out = Tensor(a.value - b.value, (a, b))

    def backward(g: np.ndarray) -> None:
        a.accumulate(_reduce_to(a.shape, g))
        b.accumulate(_reduce_to(b.shape, -g))

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _elementwise_shapes("mul", a, b)
    out = Tensor(a.value * b.value, (a, b))

    def backward(g: np.ndarray) -> None:
        a.accumulate(_reduce_to(a.shape, g * b.value))
        b.accumulate(_reduce_to(b.shape, g * a.value))

    out._backward = backward
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    _elementwise_shapes("div", a, b)
    out = Tensor(a.value / b.value, (a, b))

    def backward(g: np.ndarray) -> None:
        a.accumulate(_reduce_to(a.shape, g / b.value))
        b.accumulate(_reduce_to(b.shape, -g * a.value / (b.value * b.value)))

    out._backward = backward
    return out


def scale(x: Tensor, k: float) -> Tensor:
    out = Tensor(x.value * k, (x,))

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * k)

    out._backward = backward
    return out


def shift(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.value + c, (x,))

    def backward(g: np.ndarray) -> None:
        x.accumulate(g)

    out._backward = backward
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    out = Tensor(y, (x,))

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * (1.0 - y * y))

    out._backward = backward
    return out


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign to avoid overflow in exp for large |x|.
    v = x.value
    y = np.empty_like(v)
    pos = v >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    y[~pos] = ev / (1.0 + ev)
    out = Tensor(y, (x,))

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * y * (1.0 - y))

    out._backward = backward
    return out


def masked_softmax(logits: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise softmax restricted to positions where ``mask`` is nonzero.

    Masked entries get weight exactly 0 and never enter the normalizer. A row
    whose mask is all zero has no valid distribution and is rejected.
    """
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != logits.shape:
        raise GraphError(f"masked_softmax: mask {m.shape} vs logits {logits.shape}")
    keep = m != 0.0
    if not keep.any(axis=1).all():
        raise GraphError("masked_softmax: fully-masked row")
    z = np.where(keep, logits.value, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.where(keep, np.exp(z), 0.0)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y, (logits,))

    def backward(g: np.ndarray) -> None:
        # dz = y * (g - sum_j g_j y_j); masked entries have y = 0 exactly.
        inner = (g * y).sum(axis=1, keepdims=True)
        logits.accumulate(y * (g - inner))

    out._backward = backward
    return out


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log-softmax over the full width (used for the NLL)."""
    z = x.value - x.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = z - lse
    out = Tensor(y, (x,))

    def backward(g: np.ndarray) -> None:
        soft = np.exp(y)
        x.accumulate(g - soft * g.sum(axis=1, keepdims=True))

    out._backward = backward
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(parts)
    rows = parts[0].value.shape[0]
    for p in parts:
        if p.value.shape[0] != rows:
            raise GraphError(
                f"concat_cols: row counts differ ({[q.shape for q in parts]})")
    out = Tensor(np.concatenate([p.value for p in parts], axis=1), parts)
    widths = [p.value.shape[1] for p in parts]

    def backward(g: np.ndarray) -> None:
        start = 0
        for p, w in zip(parts, widths):
            p.accumulate(g[:, start:start + w])
            start += w

    out._backward = backward
    return out


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= x.value.shape[1]):
        raise GraphError(f"slice_cols: [{start}:{stop}] out of range for {x.shape}")
    out = Tensor(x.value[:, start:stop].copy(), (x,))

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(x.value)
        full[:, start:stop] = g
        x.accumulate(full)

    out._backward = backward
    return out


def rowwise_dot(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise GraphError(f"rowwise_dot: shapes differ, {a.shape} vs {b.shape}")
    out = Tensor((a.value * b.value).sum(axis=1, keepdims=True), (a, b))

    def backward(g: np.ndarray) -> None:
        a.accumulate(g * b.value)
        b.accumulate(g * a.value)

    out._backward = backward
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.value.sum().reshape(1, 1), (x,))

    def backward(g: np.ndarray) -> None:
        x.accumulate(np.full_like(x.value, g[0, 0]))

    out._backward = backward
    return out


def mean_all(x: Tensor) -> Tensor:
    n = x.value.size
    out = Tensor(x.value.mean().reshape(1, 1), (x,))

    def backward(g: np.ndarray) -> None:
        x.accumulate(np.full_like(x.value, g[0, 0] / n))

    out._backward = backward
    return out


def gather_rows(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= table.value.shape[0]):
        raise GraphError(
            f"gather_rows: index out of range for table with {table.value.shape[0]} rows")
    out = Tensor(table.value[idx], (table,))

    def backward(g: np.ndarray) -> None:
        if table.grad is None:
            table.grad = np.zeros_like(table.value)
        np.add.at(table.grad, idx, g)

    out._backward = backward
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: kept entries are scaled by 1/(1-rate) at training time."""
    if not 0.0 <= rate < 1.0:
        raise GraphError(f"dropout: rate {rate} outside [0, 1)")
    if rate == 0.0:
        return x
    mask = (rng.random(x.value.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.value * mask, (x,))

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * mask)

    out._backward = backward
    return out


def smooth_abs(x: Tensor) -> Tensor:
    """Differentiable |x|: sqrt(x^2 + 0.001), applied elementwise."""
    y = np.sqrt(x.value * x.value + SMOOTH_ABS_EPS)
    out = Tensor(y, (x,))

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * x.value / y)

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# Backward traversal
# ---------------------------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        # Reversed so parents are expanded in construction order.
        for parent in reversed(node._parents):
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(node) into every reachable node's gradient."""
    if not root.is_scalar():
        raise GraphError(f"backward: root must be scalar, got shape {root.shape}")
    order = _toposort(root)
    root.accumulate(np.ones((1, 1)))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# Parameters and gradient verification
# ---------------------------------------------------------------------------

class ParameterStore:
    """Named trainable tensors with a stable iteration order."""

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._entries:
            raise GraphError(f"duplicate parameter name '{name}'")
        t = Tensor(value)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._entries.items()

    def zero_grads(self) -> None:
        for t in self._entries.values():
            t.grad = None


def finite_diff_report(
    loss_fn: Callable[[], Tensor],
    store: ParameterStore,
    step: float = 1e-5,
) -> dict[str, float]:
    """Central-difference check of analytic gradients, per parameter.

    ``loss_fn`` must rebuild the graph from the store's current values and be
    deterministic (dropout disabled or with a fixed mask). Returns the max
    relative error per parameter, where the relative error of one entry is
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    if step <= 0:
        raise GraphError(f"finite_diff: step must be positive, got {step}")
    store.zero_grads()
    root = loss_fn()
    backward(root)
    analytic = {
        name: (np.zeros_like(t.value) if t.grad is None else t.grad.copy())
        for name, t in store.items()
    }

    report: dict[str, float] = {}
    for name, t in store.items():
        worst = 0.0
        flat = t.value.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            f_plus = loss_fn().item()
            flat[i] = saved - step
            f_minus = loss_fn().item()
            flat[i] = saved
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(
                    f"non-finite loss while perturbing parameter '{name}'")
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = grad_flat[i]
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if rel > worst:
                worst = rel
        report[name] = worst
    return report


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    store: ParameterStore,
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    report = finite_diff_report(loss_fn, store, step)
    return max(report.values()) if report else 0.0
