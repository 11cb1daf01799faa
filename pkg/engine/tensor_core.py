"""
Tensor Core — Minimal Reverse-Mode Autodiff
===========================================

Dense 2-D float64 tensors plus the primitives the EGTSyn network is built
from. Every primitive records a ``TapeEntry`` on its output (when some input
requires a gradient); ``backward`` linearizes those entries into a
``ComputationTape`` and replays them in reverse.

Conventions:
  - Every tensor is 2-D. Vectors are 1×n rows, scalars are 1×1.
  - ReLU subgradient at 0 is 0; max-pool ties route to the lowest row index.
  - Backward rules are looked up by name in ``_BACKWARD`` at backward time,
    so ``corrupted_rule`` can swap one out for a negative control.
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from config import settings
from utils.errors import (
    ContractError,
    DataError,
    DimensionError,
    EmptyGraphError,
    NonFiniteError,
    ParameterError,
)

_state = threading.local()


def grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disables tape recording in the current thread (frozen evaluation)."""
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@dataclass
class TapeEntry:
    """One recorded primitive application: rule name, inputs, saved context."""
    rule: str
    inputs: tuple
    saved: dict = field(default_factory=dict)


class Tensor:
    """
    Row-major float64 matrix that can take part in gradient computation.

    Leaf tensors created with ``requires_grad=True`` own a ``grad`` buffer of
    the same shape; it accumulates across ``backward`` calls until
    ``zero_grad`` is called.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_entry")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"Tensor must be at most 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"Tensor {name or ''} contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._entry = None

    @classmethod
    def _derived(cls, data, rule, inputs, **saved):
        out = cls.__new__(cls)
        out.data = data
        out.name = None
        out.grad = None
        out._entry = None
        out.requires_grad = False
        if grad_enabled() and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out._entry = TapeEntry(rule, tuple(inputs), saved)
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return self._entry is None

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def is_finite(self):
        return bool(np.all(np.isfinite(self.data)))

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>"


def constant(data, name=None):
    """Wraps raw values as a tensor that never receives a gradient."""
    if isinstance(data, Tensor):
        return data
    return Tensor(data, requires_grad=False, name=name)


def _shape_str(t):
    return f"{t.shape[0]}x{t.shape[1]}"


# ═══════════════════════════════════════════════════════════════════════════
#  PRIMITIVES
# ═══════════════════════════════════════════════════════════════════════════

def matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {_shape_str(a)} @ {_shape_str(b)}")
    return Tensor._derived(a.data @ b.data, "matmul", (a, b))


def add(a, b):
    """Elementwise sum; ``b`` may be a 1×n row broadcast over the rows of ``a``."""
    if a.shape == b.shape:
        broadcast = False
    elif b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        broadcast = True
    else:
        raise DimensionError(f"add shape mismatch: {_shape_str(a)} + {_shape_str(b)}")
    return Tensor._derived(a.data + b.data, "add", (a, b), broadcast=broadcast)


def mul(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch: {_shape_str(a)} * {_shape_str(b)}")
    return Tensor._derived(a.data * b.data, "mul", (a, b))


def scale(x, factor):
    factor = float(factor)
    return Tensor._derived(x.data * factor, "scale", (x,), factor=factor)


def sum_all(x):
    return Tensor._derived(np.array([[x.data.sum()]]), "sum_all", (x,))


def transpose(x):
    return Tensor._derived(x.data.T.copy(), "transpose", (x,))


def relu(x):
    return Tensor._derived(np.where(x.data > 0.0, x.data, 0.0), "relu", (x,))


def sigmoid(x):
    return Tensor._derived(expit(x.data), "sigmoid", (x,))


def softmax_rows(x):
    if x.shape[1] < 1:
        raise DimensionError("softmax_rows needs at least one column")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return Tensor._derived(e / e.sum(axis=1, keepdims=True), "softmax_rows", (x,))


def dropout(x, rate, training, rng):
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return Tensor._derived(x.data * mask, "dropout", (x,), mask=mask)


def row_max_pool(x):
    if x.shape[0] == 0:
        raise EmptyGraphError("row_max_pool on an empty graph (0 rows)")
    argmax = np.argmax(x.data, axis=0)
    cols = np.arange(x.shape[1])
    out = x.data[argmax, cols].reshape(1, -1)
    return Tensor._derived(out, "row_max_pool", (x,), argmax=argmax)


def row_sum_pool(x):
    if x.shape[0] == 0:
        raise EmptyGraphError("row_sum_pool on an empty graph (0 rows)")
    return Tensor._derived(x.data.sum(axis=0, keepdims=True), "row_sum_pool", (x,))


def row_mean_pool(x):
    if x.shape[0] == 0:
        raise EmptyGraphError("row_mean_pool on an empty graph (0 rows)")
    return Tensor._derived(x.data.mean(axis=0, keepdims=True), "row_mean_pool", (x,))


def concat_cols(parts):
    parts = list(parts)
    if not parts:
        raise DimensionError("concat_cols needs at least one part")
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        shapes = ", ".join(_shape_str(p) for p in parts)
        raise DimensionError(f"concat_cols row-count mismatch: {shapes}")
    if len(parts) == 1:
        return parts[0]
    widths = [p.shape[1] for p in parts]
    return Tensor._derived(np.hstack([p.data for p in parts]), "concat_cols", parts, widths=widths)


def concat_rows(parts):
    parts = list(parts)
    if not parts:
        raise DimensionError("concat_rows needs at least one part")
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        shapes = ", ".join(_shape_str(p) for p in parts)
        raise DimensionError(f"concat_rows column-count mismatch: {shapes}")
    if len(parts) == 1:
        return parts[0]
    heights = [p.shape[0] for p in parts]
    return Tensor._derived(np.vstack([p.data for p in parts]), "concat_rows", parts, heights=heights)


def flatten_rows(x):
    """m×n → 1×(m·n), row-major."""
    return Tensor._derived(x.data.reshape(1, -1).copy(), "flatten_rows", (x,))


def gather_rows(x, indices):
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= x.shape[0]):
        raise DimensionError(f"gather_rows index out of range for {x.shape[0]} rows")
    return Tensor._derived(x.data[indices], "gather_rows", (x,), indices=indices)


def layer_norm(x, gain, bias, eps=settings.LAYER_NORM_EPS):
    n = x.shape[1]
    if n < 1:
        raise DimensionError("layer_norm needs at least one column")
    if gain.shape != (1, n) or bias.shape != (1, n):
        raise DimensionError(
            f"layer_norm affine shapes {_shape_str(gain)}, {_shape_str(bias)} do not match width {n}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data
    return Tensor._derived(out, "layer_norm", (x, gain, bias), xhat=xhat, inv_std=inv_std)


def bce_loss(probs, labels):
    """Mean binary cross-entropy over a B×1 column of probabilities."""
    labels = constant(labels)
    if probs.shape != labels.shape:
        raise DimensionError(f"bce_loss shape mismatch: {_shape_str(probs)} vs {_shape_str(labels)}")
    y = labels.data
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DataError("bce_loss labels must be 0 or 1")
    lo, hi = settings.PROB_CLAMP, 1.0 - settings.PROB_CLAMP
    p = np.clip(probs.data, lo, hi)
    losses = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    inside = (probs.data >= lo) & (probs.data <= hi)
    return Tensor._derived(
        np.array([[losses.mean()]]), "bce_loss", (probs, labels), p=p, y=y, inside=inside
    )


def l2_penalty(params, delta):
    """(2/delta) · Σθ² over every given parameter."""
    if delta <= 0:
        raise ParameterError(f"L2 delta must be positive, got {delta}")
    params = list(params)
    coef = 2.0 / float(delta)
    total = sum(float(np.sum(p.data ** 2)) for p in params)
    return Tensor._derived(np.array([[coef * total]]), "l2_penalty", params, coef=coef)


# ═══════════════════════════════════════════════════════════════════════════
#  BACKWARD RULES
# ═══════════════════════════════════════════════════════════════════════════
# Each rule maps (upstream grad, entry, forward output) to one gradient per input.

def _matmul_backward(g, entry, out):
    a, b = entry.inputs
    return g @ b.data.T, a.data.T @ g


def _add_backward(g, entry, out):
    gb = g.sum(axis=0, keepdims=True) if entry.saved["broadcast"] else g
    return g, gb


def _mul_backward(g, entry, out):
    a, b = entry.inputs
    return g * b.data, g * a.data


def _scale_backward(g, entry, out):
    return (g * entry.saved["factor"],)


def _sum_all_backward(g, entry, out):
    (x,) = entry.inputs
    return (np.full(x.shape, g[0, 0]),)


def _transpose_backward(g, entry, out):
    return (g.T,)


def _relu_backward(g, entry, out):
    (x,) = entry.inputs
    return (g * (x.data > 0.0),)


def _sigmoid_backward(g, entry, out):
    return (g * out * (1.0 - out),)


def _softmax_backward(g, entry, out):
    return (out * (g - (g * out).sum(axis=1, keepdims=True)),)


def _dropout_backward(g, entry, out):
    return (g * entry.saved["mask"],)


def _row_max_pool_backward(g, entry, out):
    (x,) = entry.inputs
    gx = np.zeros_like(x.data)
    gx[entry.saved["argmax"], np.arange(x.shape[1])] = g[0]
    return (gx,)


def _row_sum_pool_backward(g, entry, out):
    (x,) = entry.inputs
    return (np.repeat(g, x.shape[0], axis=0),)


def _row_mean_pool_backward(g, entry, out):
    (x,) = entry.inputs
    return (np.repeat(g / x.shape[0], x.shape[0], axis=0),)


def _concat_cols_backward(g, entry, out):
    cuts = np.cumsum(entry.saved["widths"])[:-1]
    return tuple(np.split(g, cuts, axis=1))


def _concat_rows_backward(g, entry, out):
    cuts = np.cumsum(entry.saved["heights"])[:-1]
    return tuple(np.split(g, cuts, axis=0))


def _flatten_rows_backward(g, entry, out):
    (x,) = entry.inputs
    return (g.reshape(x.shape),)


def _gather_rows_backward(g, entry, out):
    (x,) = entry.inputs
    gx = np.zeros_like(x.data)
    np.add.at(gx, entry.saved["indices"], g)
    return (gx,)


def _layer_norm_backward(g, entry, out):
    x, gain, bias = entry.inputs
    xhat = entry.saved["xhat"]
    inv_std = entry.saved["inv_std"]
    n = x.shape[1]
    dxhat = g * gain.data
    dx = (inv_std / n) * (
        n * dxhat - dxhat.sum(axis=1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
    )
    return dx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)


def _bce_backward(g, entry, out):
    p, y, inside = entry.saved["p"], entry.saved["y"], entry.saved["inside"]
    batch = p.shape[0]
    dp = -(y / p - (1.0 - y) / (1.0 - p)) / batch
    return g[0, 0] * dp * inside, None


def _l2_backward(g, entry, out):
    coef = entry.saved["coef"]
    return tuple(g[0, 0] * coef * 2.0 * p.data for p in entry.inputs)


_BACKWARD = {
    "matmul": _matmul_backward,
    "add": _add_backward,
    "mul": _mul_backward,
    "scale": _scale_backward,
    "sum_all": _sum_all_backward,
    "transpose": _transpose_backward,
    "relu": _relu_backward,
    "sigmoid": _sigmoid_backward,
    "softmax_rows": _softmax_backward,
    "dropout": _dropout_backward,
    "row_max_pool": _row_max_pool_backward,
    "row_sum_pool": _row_sum_pool_backward,
    "row_mean_pool": _row_mean_pool_backward,
    "concat_cols": _concat_cols_backward,
    "concat_rows": _concat_rows_backward,
    "flatten_rows": _flatten_rows_backward,
    "gather_rows": _gather_rows_backward,
    "layer_norm": _layer_norm_backward,
    "bce_loss": _bce_backward,
    "l2_penalty": _l2_backward,
}


@contextmanager
def corrupted_rule(name, factor=1.5):
    """Temporarily scales the gradients produced by one backward rule."""
    if name not in _BACKWARD:
        raise ParameterError(f"Unknown backward rule '{name}'. Known: {sorted(_BACKWARD)}")
    original = _BACKWARD[name]

    def _wrong(g, entry, out):
        return tuple(None if gi is None else gi * factor for gi in original(g, entry, out))

    _BACKWARD[name] = _wrong
    try:
        yield
    finally:
        _BACKWARD[name] = original


# ═══════════════════════════════════════════════════════════════════════════
#  TAPE & BACKWARD PASS
# ═══════════════════════════════════════════════════════════════════════════

class ComputationTape:
    """Recorded primitive applications reachable from a root, inputs before outputs."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def record_from(cls, root):
        order = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._entry is not None:
                for parent in node._entry.inputs:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order)

    def leaves(self):
        return [n for n in self.nodes if n.is_leaf and n.requires_grad]

    def __len__(self):
        return sum(1 for n in self.nodes if not n.is_leaf)


def backward(loss):
    """Accumulates dLoss/dθ into the ``grad`` of every reachable leaf."""
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) loss, got {_shape_str(loss)}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires a gradient")
    if not loss.is_finite():
        raise NonFiniteError("backward called on a non-finite loss")

    tape = ComputationTape.record_from(loss)
    pending = {id(loss): np.ones((1, 1))}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        entry = node._entry
        grads = _BACKWARD[entry.rule](g, entry, node.data)
        for parent, gp in zip(entry.inputs, grads):
            if gp is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pending[key] + gp if key in pending else gp
    return tape
