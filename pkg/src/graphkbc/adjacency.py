"""Per-relation-type adjacency and its weighted composition.

Each relation type contributes a binary symmetric adjacency over the N
graph nodes. Composition forms sum_t(alpha_t * A_t) + I as one sparse
matrix; the product with a dense feature matrix uses a fixed row-major
segmented accumulation so results are bit-reproducible.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Array, Tape, TapeNode


class RelationAdjacency:
    """Symmetric binary adjacencies, one per relation type, over N nodes.

    Both directions of every edge are stored; duplicates collapse; self-loops
    are dropped (the identity term is added at composition time).
    """

    def __init__(self, num_nodes: int, edges_by_type: list[tuple[Array, Array]]):
        self.num_nodes = int(num_nodes)
        self.num_types = len(edges_by_type)
        self.rows: list[Array] = []
        self.cols: list[Array] = []
        for r, c in edges_by_type:
            r, c = self._symmetrize(np.asarray(r, dtype=np.int64),
                                    np.asarray(c, dtype=np.int64))
            self.rows.append(r)
            self.cols.append(c)
        self._degrees: list[Array] | None = None
        self._build_coo()

    @staticmethod
    def _symmetrize(r: Array, c: Array) -> tuple[Array, Array]:
        keep = r != c
        r, c = r[keep], c[keep]
        rr = np.concatenate([r, c])
        cc = np.concatenate([c, r])
        packed = np.unique(np.stack([rr, cc], axis=1), axis=0) if rr.size else \
            np.empty((0, 2), dtype=np.int64)
        return packed[:, 0], packed[:, 1]

    def _build_coo(self) -> None:
        n = self.num_nodes
        parts_r = self.rows + [np.arange(n, dtype=np.int64)]
        parts_c = self.cols + [np.arange(n, dtype=np.int64)]
        parts_t = [np.full(r.size, t, dtype=np.int64) for t, r in enumerate(self.rows)]
        parts_t.append(np.full(n, self.num_types, dtype=np.int64))  # diagonal sentinel
        rows = np.concatenate(parts_r)
        cols = np.concatenate(parts_c)
        types = np.concatenate(parts_t)
        order = np.lexsort((cols, rows))
        self.coo_rows = rows[order]
        self.coo_cols = cols[order]
        self.coo_types = types[order]
        # every row holds at least its diagonal entry, so this covers 0..n-1
        self.row_starts = np.flatnonzero(
            np.r_[True, self.coo_rows[1:] != self.coo_rows[:-1]])

    def degrees(self) -> Array:
        """Undirected edge count per node over all types (training graph)."""
        total = np.zeros(self.num_nodes, dtype=np.int64)
        for r in self.rows:
            total += np.bincount(r, minlength=self.num_nodes)
        return total

    def type_degrees(self, t: int) -> Array:
        if self._degrees is None:
            self._degrees = [np.bincount(r, minlength=self.num_nodes)
                             for r in self.rows]
        return self._degrees[t]

    def edge_count(self, t: int) -> int:
        """Undirected edges of type t (stored pairs / 2)."""
        return self.rows[t].size // 2


def build_adjacency(store, vocab) -> RelationAdjacency:
    """Adjacency from the training split, one subgraph per non-reciprocal type.

    Reciprocal relations are excluded: the graph is undirected, so a
    reciprocal edge duplicates its base edge.
    """
    num_types = vocab.num_base_relations
    s, r, o = store.split_columns("train")
    edges = []
    for t in range(num_types):
        sel = r == t
        edges.append((s[sel], o[sel]))
    return RelationAdjacency(vocab.num_entities, edges)


class ComposedAdjacency:
    """sum_t(alpha_t * A_t) + I with the alpha vector kept as provenance."""

    def __init__(self, adjacency: RelationAdjacency, alphas: Array,
                 row_normalize: bool = False):
        alphas = np.asarray(alphas)
        if alphas.shape != (adjacency.num_types,):
            raise ValueError(
                f"expected {adjacency.num_types} relation weights, got shape {alphas.shape}")
        self.adjacency = adjacency
        self.alphas = alphas
        self.row_normalize = row_normalize
        ext = np.append(alphas, alphas.dtype.type(1.0))  # diagonal weight fixed at 1
        self.vals = ext[adjacency.coo_types]
        if row_normalize:
            self.row_sums = np.add.reduceat(self.vals, adjacency.row_starts)
            self.norm_vals = self.vals / self.row_sums[adjacency.coo_rows]
        else:
            self.row_sums = None
            self.norm_vals = self.vals

    @property
    def num_nodes(self) -> int:
        return self.adjacency.num_nodes

    def spmm(self, h: Array) -> Array:
        return spmm(self, h)

    def to_dense(self) -> Array:
        n = self.num_nodes
        out = np.zeros((n, n), dtype=self.vals.dtype)
        np.add.at(out, (self.adjacency.coo_rows, self.adjacency.coo_cols),
                  self.norm_vals)
        return out

    def dump_coo(self, fh) -> None:
        """Debug dump, one `i j value` line per stored entry."""
        for i, j, v in zip(self.adjacency.coo_rows, self.adjacency.coo_cols,
                           self.norm_vals):
            fh.write(f"{i} {j} {float(v)!r}\n")


def compose(adjacency: RelationAdjacency, alphas: Array,
            row_normalize: bool = False) -> ComposedAdjacency:
    return ComposedAdjacency(adjacency, alphas, row_normalize)


def spmm(a: ComposedAdjacency, h: Array) -> Array:
    """Sparse-dense product A @ H with row-major segmented accumulation."""
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != a.num_nodes:
        raise ValueError(f"dense operand must be ({a.num_nodes}, F), got {h.shape}")
    adj = a.adjacency
    contrib = a.norm_vals[:, None].astype(h.dtype, copy=False) * h[adj.coo_cols]
    return np.add.reduceat(contrib, adj.row_starts, axis=0)


def spmm_backward(a: ComposedAdjacency, h: Array, g: Array,
                  out: Array | None = None) -> tuple[Array, Array]:
    """Gradients of sum(g * (A @ h)) with respect to h and each alpha_t.

    A is symmetric, so grad_h = A @ g (scaled per row first when normalized).
    grad_alpha_t sums <g_i, h_j> over both stored directions of type-t edges.
    """
    h = np.asarray(h)
    g = np.asarray(g)
    if g.shape != (a.num_nodes, h.shape[1]):
        raise ValueError(f"upstream gradient shape {g.shape} does not match output")
    adj = a.adjacency
    grad_alpha = np.zeros(adj.num_types, dtype=a.alphas.dtype)
    if not a.row_normalize:
        grad_h = spmm(a, g)
        for t in range(adj.num_types):
            r, c = adj.rows[t], adj.cols[t]
            if r.size:
                grad_alpha[t] = np.einsum("ef,ef->", g[r], h[c])
        return grad_h, grad_alpha

    s = a.row_sums
    g_scaled = g / s[:, None]
    unnorm = ComposedAdjacency(adj, a.alphas, row_normalize=False)
    grad_h = spmm(unnorm, g_scaled)
    z = spmm(a, h) if out is None else out
    gz = np.einsum("ef,ef->e", g, z)  # per-row <g_i, z_i>
    for t in range(adj.num_types):
        r, c = adj.rows[t], adj.cols[t]
        direct = np.einsum("ef,ef->", g_scaled[r], h[c]) if r.size else 0.0
        deg = adj.type_degrees(t)
        grad_alpha[t] = direct - np.sum(deg * gz / s)
    return grad_h, grad_alpha


def spmm_op(tape: Tape, adjacency: RelationAdjacency, alphas: TapeNode,
            h: TapeNode, row_normalize: bool = False) -> TapeNode:
    """Tape-recorded A(alpha) @ H, differentiable in alpha and H."""
    composed = compose(adjacency, alphas.value, row_normalize)
    out = spmm(composed, h.value)
    hv = h.value

    def vjp(g):
        grad_h, grad_alpha = spmm_backward(composed, hv, g, out=out)
        return grad_alpha, grad_h

    return tape.record("spmm", out, (alphas, h), vjp)
