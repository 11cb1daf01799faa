"""
Network building blocks on top of engine.tensor_core.

Modules keep their parameters in insertion order under dotted names
(``gtd.mha.head0.Wq``), which is also the order checkpoints are written in.
"""

import math

import numpy as np

from engine.tensor_core import (
    Tensor,
    add,
    concat_cols,
    dropout,
    layer_norm,
    matmul,
    relu,
    row_max_pool,
    row_mean_pool,
    row_sum_pool,
    scale,
    softmax_rows,
    transpose,
)
from utils.errors import ConfigError, DimensionError

POOLINGS = {
    "max": row_max_pool,
    "sum": row_sum_pool,
    "mean": row_mean_pool,
}


def glorot(rng, fan_in, fan_out, name=None):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True, name=name)


def zeros(width, name=None):
    return Tensor(np.zeros((1, width)), requires_grad=True, name=name)


class Module:
    """Named parameter container with nested children."""

    def __init__(self):
        self._params = {}
        self._children = {}

    def add_param(self, name, tensor):
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def add_child(self, name, module):
        self._children[name] = module
        return module

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for child_name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{child_name}.")

    def parameters(self):
        return dict(self.named_parameters())

    def param_count(self):
        return int(sum(p.data.size for _, p in self.named_parameters()))


class Linear(Module):
    def __init__(self, fan_in, fan_out, rng, bias=True):
        super().__init__()
        self.fan_in, self.fan_out = fan_in, fan_out
        self.W = self.add_param("W", glorot(rng, fan_in, fan_out))
        self.b = self.add_param("b", zeros(fan_out)) if bias else None

    def __call__(self, x):
        if x.shape[1] != self.fan_in:
            raise DimensionError(f"Linear expects width {self.fan_in}, got {x.shape[1]}")
        y = matmul(x, self.W)
        return add(y, self.b) if self.b is not None else y


def gcn_layer(H, A_norm, W):
    """ReLU(A_norm · H · W)."""
    return relu(matmul(matmul(A_norm, H), W))


class GCNStack(Module):
    """
    ``depth`` bias-free GCN layers: 78 -> hidden x (depth-1) -> out_dim, each
    followed by ReLU, then a graph-level readout.
    """

    def __init__(self, in_dim, hidden, out_dim, depth, rng, pooling="max"):
        super().__init__()
        if depth < 1:
            raise ConfigError(f"GCN depth must be at least 1, got {depth}")
        if pooling not in POOLINGS:
            raise ConfigError(f"Unknown pooling '{pooling}'. Use one of {sorted(POOLINGS)}")
        widths = [in_dim] + [hidden] * (depth - 1) + [out_dim]
        self.weights = [
            self.add_param(f"{i}.W", glorot(rng, widths[i], widths[i + 1])) for i in range(depth)
        ]
        self.pool = POOLINGS[pooling]

    def __call__(self, graph):
        h = graph.node_features
        for W in self.weights:
            h = gcn_layer(h, graph.adjacency_norm, W)
        return self.pool(h)


def attention(Q, K, V):
    """softmax(Q Kᵀ / √d) V with d the key width."""
    d = K.shape[1]
    scores = scale(matmul(Q, transpose(K)), 1.0 / math.sqrt(d))
    return matmul(softmax_rows(scores), V)


class MultiHeadAttention(Module):
    """Per-head W_i^Q, W_i^K, W_i^V (d x d/h), heads concatenated, then W^o."""

    def __init__(self, dim, heads, rng):
        super().__init__()
        if heads < 1 or dim % heads != 0:
            raise ConfigError(f"embedding width {dim} is not divisible by {heads} attention heads")
        self.dim, self.heads = dim, heads
        head_dim = dim // heads
        self.projections = []
        for i in range(heads):
            self.projections.append((
                self.add_param(f"head{i}.Wq", glorot(rng, dim, head_dim)),
                self.add_param(f"head{i}.Wk", glorot(rng, dim, head_dim)),
                self.add_param(f"head{i}.Wv", glorot(rng, dim, head_dim)),
            ))
        self.Wo = self.add_param("Wo", glorot(rng, dim, dim))

    def __call__(self, Q, K, V):
        for t in (Q, K, V):
            if t.shape[1] != self.dim:
                raise DimensionError(f"multi-head attention expects width {self.dim}, got {t.shape[1]}")
        heads = [attention(matmul(Q, Wq), matmul(K, Wk), matmul(V, Wv)) for Wq, Wk, Wv in self.projections]
        return matmul(concat_cols(heads), self.Wo)


class LayerNorm(Module):
    def __init__(self, width, eps):
        super().__init__()
        self.eps = eps
        self.gain = self.add_param("gain", Tensor(np.ones((1, width)), requires_grad=True))
        self.bias = self.add_param("bias", zeros(width))

    def __call__(self, x):
        return layer_norm(x, self.gain, self.bias, self.eps)


class FeedForward(Module):
    """ReLU(x W1 + b1) W2 + b2."""

    def __init__(self, dim, hidden, rng):
        super().__init__()
        self.inner = self.add_child("0", Linear(dim, hidden, rng))
        self.outer = self.add_child("1", Linear(hidden, dim, rng))

    def __call__(self, x):
        return self.outer(relu(self.inner(x)))


class MLP(Module):
    """
    Stack of Linear -> ReLU -> Dropout. With ``activate_last`` the final layer
    is ReLU'd (cell reduction); otherwise it is left linear (logit head).
    """

    def __init__(self, widths, rng, dropout_rate, activate_last=True, dropout_last=False):
        super().__init__()
        self.layers = [
            self.add_child(str(i), Linear(widths[i], widths[i + 1], rng)) for i in range(len(widths) - 1)
        ]
        self.dropout_rate = dropout_rate
        self.activate_last = activate_last
        self.dropout_last = dropout_last

    def __call__(self, x, training=False, rng=None):
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.activate_last:
                x = relu(x)
            if i < last or self.dropout_last:
                x = dropout(x, self.dropout_rate, training, rng)
        return x
