"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every operation executed inside its ``with`` block.
Calling :func:`backward` on a scalar result replays the tape in reverse and
accumulates gradients into every tensor with ``requires_grad=True``.  Outside
an active tape, operations compute values only, which is how evaluation-mode
forward passes run.

Tensors are immutable after creation except for their ``grad`` buffer.  A tape
and the tensors recorded on it belong to a single thread; independent tapes on
different threads do not interact.
"""

from __future__ import annotations

import threading

import numpy as np

_state = threading.local()


def _active_tape():
    return getattr(_state, "tape", None)


class Tape:
    """Ordered record of operations for one forward pass."""

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        _state.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _state.stack
        stack.pop()
        _state.tape = stack[-1] if stack else None
        return False

    def _record(self, out, backward_fn):
        out._tape = self
        out._index = len(self._nodes)
        self._nodes.append((out, backward_fn))


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "_index")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("tensor created with non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None
        self._index = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return np.array(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data):
    """Constant tensor; never receives a gradient."""
    return Tensor(data, requires_grad=False)


def parameter(data):
    """Learnable tensor; :func:`backward` fills its ``grad``."""
    return Tensor(data, requires_grad=True)


def _result(data, inputs, backward_fn):
    """Wrap an op result, recording it when a tape is active."""
    if not np.all(np.isfinite(data)):
        raise FloatingPointError("operation produced non-finite values")
    tape = _active_tape()
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs and tape is not None)
    if tape is not None and needs:
        tape._record(out, backward_fn)
    return out


def _accum(t, delta):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += delta


def backward(loss):
    """Populate ``grad`` on every ``requires_grad`` tensor below ``loss``.

    ``loss`` must be a scalar recorded on an active-or-finished tape.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    tape = loss._tape
    if tape is None:
        raise ValueError("loss was not recorded on a tape; no parameters reachable")
    loss.grad = np.ones_like(loss.data)
    for out, backward_fn in reversed(tape._nodes[: loss._index + 1]):
        if out.grad is None:
            continue
        backward_fn(out.grad)


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def _check_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a, b):
    _check_same_shape("add", a, b)

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return _result(a.data + b.data, (a, b), bwd)


def sub(a, b):
    _check_same_shape("sub", a, b)

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return _result(a.data - b.data, (a, b), bwd)


def mul(a, b):
    _check_same_shape("mul", a, b)

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(a.data * b.data, (a, b), bwd)


def scale(t, c):
    """t * c for a plain float c."""
    c = float(c)

    def bwd(g):
        _accum(t, g * c)

    return _result(t.data * c, (t,), bwd)


def affine(t, scale_c, shift_c):
    """scale_c * t + shift_c, both plain floats (e.g. 1 - x)."""
    scale_c = float(scale_c)

    def bwd(g):
        _accum(t, g * scale_c)

    return _result(scale_c * t.data + float(shift_c), (t,), bwd)


def tanh(t):
    out_data = np.tanh(t.data)

    def bwd(g):
        _accum(t, g * (1.0 - out_data * out_data))

    return _result(out_data, (t,), bwd)


def sigmoid(t):
    x = t.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        _accum(t, g * out_data * (1.0 - out_data))

    return _result(out_data, (t,), bwd)


def matmul(a, b):
    """Matrix product with numpy semantics for 1-D operands."""
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0:
        raise ValueError(f"matmul: operands must be 1-D or 2-D, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != (bd.shape[0] if bd.ndim >= 1 else None):
        raise ValueError(f"matmul: shape mismatch {ad.shape} vs {bd.shape}")
    out_data = np.matmul(ad, bd)

    def bwd(g):
        a2 = ad.reshape(1, -1) if ad.ndim == 1 else ad
        b2 = bd.reshape(-1, 1) if bd.ndim == 1 else bd
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        _accum(a, (g2 @ b2.T).reshape(ad.shape))
        _accum(b, (a2.T @ g2).reshape(bd.shape))

    return _result(out_data, (a, b), bwd)


def concat(parts):
    """Concatenate 1-D tensors into one 1-D tensor."""
    for p in parts:
        if p.data.ndim != 1:
            raise ValueError(f"concat: expected 1-D parts, got shape {p.data.shape}")
    parts = list(parts)
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[lo:hi])

    return _result(np.concatenate([p.data for p in parts]), parts, bwd)


def stack(rows):
    """Stack equal-length 1-D tensors into a 2-D tensor, one per row."""
    rows = list(rows)
    width = rows[0].data.shape[0]
    for r in rows:
        if r.data.shape != (width,):
            raise ValueError(f"stack: row shape mismatch {r.data.shape} vs {(width,)}")

    def bwd(g):
        for i, r in enumerate(rows):
            _accum(r, g[i])

    return _result(np.stack([r.data for r in rows]), rows, bwd)


def sum_over(t, axis=None):
    """Sum over all entries (axis=None) or along one axis."""
    shape = t.data.shape

    def bwd(g):
        if axis is None:
            _accum(t, np.broadcast_to(g, shape).copy())
        else:
            _accum(t, np.broadcast_to(np.expand_dims(g, axis), shape).copy())

    return _result(np.sum(t.data, axis=axis), (t,), bwd)


def mean(t):
    return scale(sum_over(t), 1.0 / t.data.size)


def take_row(table, index):
    """Row gather from a 2-D table; backward scatter-adds into the table."""
    if table.data.ndim != 2:
        raise ValueError(f"take_row: expected 2-D table, got shape {table.data.shape}")
    index = int(index)

    def bwd(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            table.grad[index] += g

    return _result(table.data[index].copy(), (table,), bwd)


# ---------------------------------------------------------------------------
# attention and loss primitives
# ---------------------------------------------------------------------------


def stable_softmax(logits, mask=None):
    """Masked softmax over a 1-D tensor, computed with max-subtraction.

    Masked entries come out exactly 0; unmasked entries are positive and sum
    to 1.  An all-false mask is an error ("empty attention support").
    """
    if logits.data.ndim != 1:
        raise ValueError(f"stable_softmax: expected 1-D logits, got shape {logits.data.shape}")
    n = logits.data.shape[0]
    if mask is None:
        mask = np.ones(n, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n,):
            raise ValueError(f"stable_softmax: mask shape {mask.shape} vs logits {logits.data.shape}")
    if not mask.any():
        raise ValueError("empty attention support")
    x = logits.data[mask]
    e = np.exp(x - np.max(x))
    # value-sorted denominator: result independent of entry order
    probs = np.zeros(n, dtype=np.float64)
    probs[mask] = e / np.sort(e).sum()

    def bwd(g):
        inner = float(np.dot(g[mask], probs[mask]))
        d = np.zeros(n, dtype=np.float64)
        d[mask] = probs[mask] * (g[mask] - inner)
        _accum(logits, d)

    return _result(probs, (logits,), bwd)


def weighted_row_sum(weights, rows):
    """Sum of rows scaled by per-row weights: (k,) x (k, n) -> (n,).

    Per-column summands are accumulated in sorted value order, so the result
    does not depend on how the rows happen to be ordered.
    """
    if weights.data.ndim != 1 or rows.data.ndim != 2 \
            or weights.data.shape[0] != rows.data.shape[0]:
        raise ValueError(
            f"weighted_row_sum: shape mismatch {weights.data.shape} vs {rows.data.shape}")
    products = weights.data[:, None] * rows.data
    out_data = np.sort(products, axis=0).sum(axis=0)

    def bwd(g):
        _accum(weights, rows.data @ g)
        _accum(rows, weights.data[:, None] * g[None, :])

    return _result(out_data, (weights, rows), bwd)


BCE_EPS = 1e-7


def binary_cross_entropy(pred, target):
    """Mean binary cross-entropy of probabilities against 0/1 targets.

    Predictions are clamped to [BCE_EPS, 1 - BCE_EPS]; clamped components get
    zero gradient.
    """
    y = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.data.ndim != 1 or pred.data.shape != y.shape:
        raise ValueError(f"binary_cross_entropy: shape mismatch {pred.data.shape} vs {y.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("binary_cross_entropy: targets must be 0 or 1")
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    k = y.shape[0]
    loss = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))

    def bwd(g):
        inside = (pred.data > BCE_EPS) & (pred.data < 1.0 - BCE_EPS)
        d = np.where(inside, (-y / p + (1.0 - y) / (1.0 - p)) / k, 0.0)
        _accum(pred, float(g) * d)

    return _result(loss, (pred,), bwd)
