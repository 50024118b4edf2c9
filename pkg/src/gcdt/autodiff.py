"""Small reverse-mode automatic differentiation engine over numpy arrays.

Every operation that touches a tensor with ``requires_grad`` set records a
``Node`` holding its inputs and a backward rule.  Nodes carry a global,
strictly increasing sequence number, so the set of nodes reachable from a
loss, sorted by that number, is exactly the order in which they executed.
``backward`` walks that record once, in reverse.

Broadcasting is deliberately absent except for adding a bias vector to the
last axis of a matrix; any other shape disagreement raises ``ShapeError``.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_seq = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    pass


class Node:
    __slots__ = ("seq", "op", "inputs", "backward")

    def __init__(self, op: str, inputs: tuple, backward: Callable):
        self.seq = next(_seq)
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, key):
        return take(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording nodes (inference, finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _result(op: str, data: np.ndarray, inputs: tuple, backward: Callable) -> Tensor:
    needs = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out.node = Node(op, inputs, backward)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# --------------------------------------------------------------------------
# backward rules; kept at module level so tests can inject faults into them

def _sigmoid_grad(out: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * out * (1.0 - out)


def _tanh_grad(out: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * (1.0 - out * out)


def _matmul_grads(a: np.ndarray, b: np.ndarray, g: np.ndarray):
    a2 = a.reshape(-1, a.shape[-1])
    g2 = g.reshape(-1, g.shape[-1])
    return (g @ b.T), (a2.T @ g2)


# --------------------------------------------------------------------------
# operations

def matmul(a, b) -> Tensor:
    """``a @ b`` with ``b`` a matrix; ``a`` may carry leading batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")

    def backward(g):
        return _matmul_grads(a.data, b.data, g)

    return _result("matmul", a.data @ b.data, (a, b), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _result("add", a.data + b.data, (a, b), lambda g: (g, g))
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        # bias row: the single permitted broadcast
        def backward(g):
            return g, g.reshape(-1, g.shape[-1]).sum(axis=0)

        return _result("add_bias", a.data + b.data, (a, b), backward)
    raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _result("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    return _result("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _result("scale", a.data * c, (a,), lambda g: (g * c,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result("sigmoid", out, (a,), lambda g: (_sigmoid_grad(out, g),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result("tanh", out, (a,), lambda g: (_tanh_grad(out, g),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    """Concatenate along the last axis."""
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("concat: no inputs")
    if axis not in (-1, ts[0].ndim - 1):
        raise ShapeError("concat: only the last axis is supported")
    lead = ts[0].shape[:-1]
    for t in ts[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(f"concat: shape mismatch {ts[0].shape} vs {t.shape}")
    widths = [t.shape[-1] for t in ts]
    bounds = np.cumsum([0] + widths)

    def backward(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return _result("concat", np.concatenate([t.data for t in ts], axis=-1), ts, backward)


def take(a, key) -> Tensor:
    """Basic or fancy indexing; the gradient is scatter-added back."""
    a = as_tensor(a)
    out = a.data[key]
    fancy = isinstance(key, np.ndarray) or (
        isinstance(key, tuple) and any(isinstance(k, (np.ndarray, list)) for k in key))

    def backward(g):
        full = np.zeros_like(a.data)
        if fancy:
            np.add.at(full, key, g)
        else:
            full[key] += g
        return (full,)

    return _result("take", np.array(out, copy=True), (a,), backward)


def slice_last(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if not 0 <= start < stop <= a.shape[-1]:
        raise ShapeError(f"slice: range [{start}, {stop}) outside last axis of {a.shape}")
    return take(a, (Ellipsis, slice(start, stop)))


def gather_rows(table, ids) -> Tensor:
    """Embedding lookup: ``table[ids]`` for an integer array of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"gather: table must be a matrix, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"gather: index out of range for table {table.shape}")
    return take(table, ids)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    for t in ts[1:]:
        _same_shape("stack", ts[0], t)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _result("stack", np.stack([t.data for t in ts], axis=axis), ts, backward)


def reshape(a, shape: tuple) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from exc
    return _result("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _result("sum", out, (a,), backward)


def mean(a, axis: int) -> Tensor:
    a = as_tensor(a)
    n = a.shape[axis]
    out = a.data.mean(axis=axis)
    return _result("mean", out, (a,),
                   lambda g: (np.broadcast_to(np.expand_dims(g, axis), a.shape) / n,))


def max(a, axis: int) -> Tensor:  # noqa: A001 - mirrors numpy
    """Max over one axis; the gradient goes to the first maximal entry."""
    a = as_tensor(a)
    idx = np.expand_dims(a.data.argmax(axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _result("max", out, (a,), backward)


def dropout_mask(shape: tuple, keep_prob: float, rng: np.random.Generator,
                 dtype=np.float64) -> np.ndarray:
    """Inverted-dropout mask: zeros with prob ``1 - keep_prob``, else ``1/keep_prob``."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"dropout: keep probability {keep_prob} outside (0, 1]")
    if keep_prob == 1.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) < keep_prob
    return keep.astype(dtype) / keep_prob


def dropout(a, keep_prob: float, rng: np.random.Generator | None, training: bool,
            mask: np.ndarray | None = None) -> Tensor:
    """Inverted dropout; identity (the same object) outside training."""
    a = as_tensor(a)
    if not training or keep_prob >= 1.0:
        return a
    if mask is None:
        mask = dropout_mask(a.shape, keep_prob, rng, a.data.dtype)
    elif mask.shape != a.shape:
        raise ShapeError(f"dropout: mask shape {mask.shape} vs {a.shape}")
    return _result("dropout", a.data * mask, (a,), lambda g: (g * mask,))


def _softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(a) -> Tensor:
    a = as_tensor(a)
    out = _softmax_np(a.data)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result("softmax", out, (a,), backward)


def softmax_cross_entropy(logits, targets, weights=None) -> Tensor:
    """Weighted sum over rows of ``-log softmax(logits)[target]``.

    ``logits`` is (N, K); ``targets`` holds N class ids; ``weights`` (N,)
    defaults to ones.  Rows with weight 0 contribute nothing, gradient
    included.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(
            f"softmax_cross_entropy: shape mismatch {logits.shape} vs {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise ShapeError("softmax_cross_entropy: target id out of range")
    w = np.ones(len(targets)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != targets.shape:
        raise ShapeError(f"softmax_cross_entropy: weights {w.shape} vs {targets.shape}")
    rows = np.arange(len(targets))
    logp = log_softmax_np(logits.data)
    total = -(w * logp[rows, targets]).sum()

    def backward(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        return (d * (w * g)[:, None],)

    return _result("softmax_xent", np.asarray(total), (logits,), backward)


# --------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor."""
    if loss.size != 1:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any tensor requiring grad")
    if loss.node is None:
        _accumulate(loss, np.ones_like(loss.data))
        return

    # collect the executed record reachable from the loss
    nodes: dict[int, Tensor] = {}
    stack_ = [loss]
    seen = {id(loss)}
    while stack_:
        t = stack_.pop()
        if t.node is None:
            continue
        nodes[t.node.seq] = t
        for inp in t.node.inputs:
            if inp.requires_grad and id(inp) not in seen:
                seen.add(id(inp))
                stack_.append(inp)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for seq in sorted(nodes, reverse=True):
        t = nodes[seq]
        g = grads.pop(id(t), None)
        if g is None:
            continue
        _accumulate(t, g)
        for inp, gi in zip(t.node.inputs, t.node.backward(g)):
            if not inp.requires_grad:
                continue
            if inp.node is None:
                _accumulate(inp, gi)
            elif id(inp) in grads:
                grads[id(inp)] = grads[id(inp)] + gi
            else:
                grads[id(inp)] = gi


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


# --------------------------------------------------------------------------
# finite differences

def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))


def gradient_check(loss_fn: Callable[[], Tensor], tensors: Iterable[Tensor],
                   epsilon: float = 1e-5, max_coords: int | None = None,
                   rng: np.random.Generator | None = None) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn`` rebuilds a scalar loss from the current values of
    ``tensors``; each is perturbed in place and restored.  With
    ``max_coords`` only that many coordinates per tensor are probed,
    chosen by ``rng``.
    """
    tensors = list(tensors)
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    backward(loss)
    worst = 0.0
    for ti, t in enumerate(tensors):
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        coords = list(np.ndindex(t.shape))
        if max_coords is not None and len(coords) > max_coords:
            pick = (rng or np.random.default_rng(0)).choice(len(coords), max_coords, replace=False)
            coords = [coords[i] for i in sorted(pick)]
        for c in coords:
            orig = t.data[c]
            with no_grad():
                t.data[c] = orig + epsilon
                up = float(loss_fn().data)
                t.data[c] = orig - epsilon
                down = float(loss_fn().data)
            t.data[c] = orig
            num = (up - down) / (2.0 * epsilon)
            ana = float(analytic[c])
            if not (np.isfinite(num) and np.isfinite(ana)):
                label = t.name or f"tensor {ti}"
                raise FloatingPointError(
                    f"gradient check: non-finite value at {label}{list(c)} "
                    f"(analytic={ana}, numeric={num})")
            worst = np.maximum(worst, float(rel_error(np.float64(ana), np.float64(num))))
    return float(worst)


def finite_diff_check(f: Callable[[Tensor], Tensor], point, epsilon: float = 1e-5) -> float:
    """Check ``f`` at ``point``; non-scalar outputs are contracted with fixed weights."""
    x = Tensor(np.array(point, dtype=np.float64, copy=True), requires_grad=True, name="x")
    probe: list[np.ndarray] = []

    def loss_fn():
        out = f(x)
        if out.size == 1:
            return reshape(out, ())
        if not probe:
            probe.append(np.random.default_rng(12345).standard_normal(out.shape))
        return sum(mul(out, probe[0]))

    return gradient_check(loss_fn, [x], epsilon)
