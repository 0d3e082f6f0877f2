"""Weighted graph-convolutional encoder.

Each layer maps node features H to act(A(alpha) @ H @ W) where A(alpha) is
the weighted composition of the per-relation adjacencies plus identity.
A node-wise reference path computes the same propagation by explicit
neighbor iteration and serves as the oracle for the matrix form.
"""
from __future__ import annotations

import numpy as np

from .adjacency import RelationAdjacency, compose, spmm_op
from .autodiff import Array, Parameter, Tape, TapeNode, gaussian_init, relu_fwd, \
    xavier_uniform


class GraphConvLayer:
    """One weighted graph-convolution layer."""

    def __init__(self, name: str, rng: np.random.Generator, in_dim: int,
                 out_dim: int, num_types: int, activation: str = "relu",
                 dtype=np.float64):
        if activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        self.weight = Parameter(f"{name}.weight",
                                xavier_uniform(rng, (in_dim, out_dim), dtype=dtype))
        self.alphas = Parameter(f"{name}.alphas", np.ones(num_types, dtype=dtype))
        self.activation = activation

    def params(self) -> list[Parameter]:
        return [self.weight, self.alphas]

    def _act(self, x: Array) -> Array:
        return relu_fwd(x)[0] if self.activation == "relu" else x


def layer_forward(h: Array, adjacency: RelationAdjacency, layer: GraphConvLayer,
                  row_normalize: bool = False) -> Array:
    """Matrix form act(A @ H @ W); no dropout (pure evaluation path)."""
    composed = compose(adjacency, layer.alphas.value, row_normalize)
    return layer._act(composed.spmm(h @ layer.weight.value))


def nodewise_forward(h: Array, adjacency: RelationAdjacency,
                     layer: GraphConvLayer) -> Array:
    """Reference path: per node, act(sum_j alpha_t(i,j) h_j W + h_i W)."""
    w = layer.weight.value
    alphas = layer.alphas.value
    hw = h @ w
    out = hw.copy()  # self-connection, weight fixed at 1
    for t in range(adjacency.num_types):
        rows, cols = adjacency.rows[t], adjacency.cols[t]
        for i, j in zip(rows, cols):
            out[i] += alphas[t] * hw[j]
    return layer._act(out)


class GraphEncoder:
    """Stack of graph-conv layers over a trainable initial feature table.

    With zero layers the encoder degenerates to the raw embedding table,
    which is the decoder-only operating mode.
    """

    def __init__(self, rng: np.random.Generator, num_nodes: int, num_types: int,
                 embedding_size: int, num_layers: int = 2, dropout: float = 0.0,
                 activation: str = "relu", row_normalize: bool = False,
                 dtype=np.float64):
        self.h1 = Parameter("encoder.h1",
                            gaussian_init(rng, (num_nodes, embedding_size),
                                          std=0.1, dtype=dtype))
        self.layers = [
            GraphConvLayer(f"encoder.layer{i}", rng, embedding_size,
                           embedding_size, num_types, activation, dtype)
            for i in range(num_layers)
        ]
        self.dropout = dropout
        self.row_normalize = row_normalize

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def embedding_size(self) -> int:
        return self.h1.shape[1]

    def params(self) -> list[Parameter]:
        out = [self.h1]
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def encode(self, tape: Tape, adjacency: RelationAdjacency) -> TapeNode:
        """Tape-recorded full-graph forward; dropout after each layer in train mode."""
        node = tape.leaf(self.h1)
        for layer in self.layers:
            p = tape.matmul(node, tape.leaf(layer.weight))
            z = spmm_op(tape, adjacency, tape.leaf(layer.alphas), p,
                        self.row_normalize)
            node = tape.relu(z) if layer.activation == "relu" else z
            if self.dropout > 0.0:
                node = tape.dropout(node, self.dropout)
        return node

    def encode_eval(self, adjacency: RelationAdjacency) -> Array:
        """Deterministic evaluation forward (no dropout)."""
        h = self.h1.value
        for layer in self.layers:
            h = layer_forward(h, adjacency, layer, self.row_normalize)
        return h
