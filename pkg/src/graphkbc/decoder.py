"""Translational convolutional decoder.

A (subject, relation) embedding pair is stacked into two rows, zero-padded,
and swept by C width-K kernels along the embedding dimension; the feature
map is projected back to embedding size and matched against every entity
embedding by inner product. Because each kernel output is a sum of a
filtered subject and a filtered relation, the additive structure
e_s + e_r ~ e_o survives the convolution.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Array, BatchNorm, Parameter, Tape, TapeNode, batchnorm_fwd, \
    dropout_fwd, gaussian_init, relu_fwd, sigmoid_fwd, xavier_uniform


def pad_widths(kernel_width: int) -> tuple[int, int]:
    """Zero counts (left, right) so the swept output keeps the input width.

    Odd K pads floor(K/2) on both sides; even K pads floor(K/2)-1 left and
    floor(K/2) right. Total is always K-1.
    """
    if kernel_width < 1:
        raise ValueError("kernel width must be >= 1")
    half = kernel_width // 2
    if kernel_width % 2 == 1:
        return half, half
    return half - 1, half


def pad(e: Array, kernel_width: int) -> Array:
    """Zero-pad the last axis per the kernel-parity rule."""
    left, right = pad_widths(kernel_width)
    widths = [(0, 0)] * (e.ndim - 1) + [(left, right)]
    return np.pad(e, widths)


class DecoderBank:
    """Kernels, projection, and relation embeddings of the decoder."""

    def __init__(self, rng: np.random.Generator, num_relations: int,
                 embedding_size: int, num_kernels: int = 100,
                 kernel_width: int = 5, dropout: float = 0.0,
                 batchnorm: bool = True, dtype=np.float64):
        c, k, f = num_kernels, kernel_width, embedding_size
        if k < 1:
            raise ValueError("kernel width must be >= 1")
        self.kernels = Parameter(
            "decoder.kernels",
            xavier_uniform(rng, (c, 2, k), fan_in=2 * k, fan_out=c * k, dtype=dtype))
        self.proj = Parameter("decoder.proj",
                              xavier_uniform(rng, (c * f, f), dtype=dtype))
        self.rel_emb = Parameter("decoder.rel_emb",
                                 gaussian_init(rng, (num_relations, f), std=0.1,
                                               dtype=dtype))
        self.dropout = dropout
        self.bn_fm = BatchNorm("decoder.bn_fm", c, dtype=dtype) if batchnorm else None
        self.bn_proj = BatchNorm("decoder.bn_proj", f, dtype=dtype) if batchnorm else None

    @property
    def num_kernels(self) -> int:
        return self.kernels.shape[0]

    @property
    def kernel_width(self) -> int:
        return self.kernels.shape[2]

    @property
    def embedding_size(self) -> int:
        return self.proj.shape[1]

    def params(self) -> list[Parameter]:
        out = [self.kernels, self.proj, self.rel_emb]
        if self.bn_fm is not None:
            out.extend(self.bn_fm.params())
            out.extend(self.bn_proj.params())
        return out


def conv_forward(e_s: Array, e_r: Array, bank: DecoderBank) -> Array:
    """Raw feature map: kernel c, position n -> sum over taps of the padded pair.

    Accepts (F,) vectors or (B, F) batches; returns (C, F) or (B, C, F).
    """
    single = e_s.ndim == 1
    es = np.atleast_2d(e_s)
    er = np.atleast_2d(e_r)
    stacked = np.stack([es, er], axis=1)  # (B, 2, F)
    m = _conv_pair_fwd(stacked, bank.kernels.value)
    return m[0] if single else m


def _conv_pair_fwd(stacked: Array, kernels: Array) -> Array:
    """(B, 2, F), (C, 2, K) -> (B, C, F) correlation with parity padding.

    The subject and relation halves are filtered separately and added last,
    so the translational decomposition M(s, r) = M(s, 0) + M(0, r) holds to
    the bit: a zero half contributes an exact zero.
    """
    k = kernels.shape[2]
    padded = pad(stacked, k)  # (B, 2, F+K-1)
    windows = np.lib.stride_tricks.sliding_window_view(padded, k, axis=2)
    # windows: (B, 2, F, K); no kernel flip, taps run forward
    m_s = np.einsum("bnk,ck->bcn", windows[:, 0], kernels[:, 0], optimize=True)
    m_r = np.einsum("bnk,ck->bcn", windows[:, 1], kernels[:, 1], optimize=True)
    return m_s + m_r


def _conv_pair_bwd(g: Array, stacked: Array, kernels: Array) -> tuple[Array, Array]:
    """Gradients of the correlation w.r.t. the stacked pair and the kernels."""
    b, _, f = stacked.shape
    k = kernels.shape[2]
    left, _ = pad_widths(k)
    padded = pad(stacked, k)
    windows = np.lib.stride_tricks.sliding_window_view(padded, k, axis=2)
    g_kernels = np.einsum("bcn,brnk->crk", g, windows, optimize=True)
    g_padded = np.zeros_like(padded)
    for tau in range(k):
        # d/d padded[:, r, n+tau] of sum_c g[:,c,n] * kernels[c,r,tau]
        g_padded[:, :, tau:tau + f] += np.einsum("bcn,cr->brn", g, kernels[:, :, tau])
    g_stacked = g_padded[:, :, left:left + f]
    return g_stacked, g_kernels


def conv_pair_op(tape: Tape, stacked: TapeNode, kernels: TapeNode) -> TapeNode:
    sv, kv = stacked.value, kernels.value
    out = _conv_pair_fwd(sv, kv)

    def vjp(g):
        g_stacked, g_kernels = _conv_pair_bwd(g, sv, kv)
        return g_stacked, g_kernels

    return tape.record("conv_pair", out, (stacked, kernels), vjp)


def score_all(e_s: Array, e_r: Array, entities: Array, bank: DecoderBank,
              mode: str = "eval", rng: np.random.Generator | None = None) -> Array:
    """Scores of one query against every entity (pure evaluation path).

    h = relu(vec(M) @ W) after optional batch normalization; the result is
    the inner product of h with every row of the entity matrix. In train
    mode dropout masks are drawn from rng and batch statistics are used.
    """
    single = e_s.ndim == 1
    es, er = np.atleast_2d(e_s), np.atleast_2d(e_r)
    b = es.shape[0]
    drop = bank.dropout if mode == "train" else 0.0
    stacked = np.stack([es, er], axis=1)
    if drop > 0.0:
        stacked = dropout_fwd(stacked, drop, mode, rng)[0]
    m = _conv_pair_fwd(stacked, bank.kernels.value)
    if bank.bn_fm is not None:
        m = _bn_apply(bank.bn_fm, m, (0, 2), mode)
    if drop > 0.0:
        m = dropout_fwd(m, drop, mode, rng)[0]
    z = m.reshape(b, -1) @ bank.proj.value
    if bank.bn_proj is not None:
        z = _bn_apply(bank.bn_proj, z, (0,), mode)
    h = relu_fwd(z)[0]
    if drop > 0.0:
        h = dropout_fwd(h, drop, mode, rng)[0]
    scores = h @ entities.T
    return scores[0] if single else scores


def _bn_apply(bn: BatchNorm, x: Array, axes: tuple[int, ...], mode: str) -> Array:
    out, _ = batchnorm_fwd(x, bn.gamma.value, bn.beta.value,
                           bn.running_mean.value, bn.running_var.value,
                           axes, mode, bn.momentum, bn.eps)
    return out


def prob(scores: Array) -> Array:
    """Logistic sigmoid of the scores; order-preserving, saturation-safe."""
    return sigmoid_fwd(np.asarray(scores, dtype=np.float64))


class ConvDecoder:
    """Tape-aware wrapper scoring (s, r) query batches against all entities."""

    kind = "conv"

    def __init__(self, rng: np.random.Generator, num_relations: int,
                 embedding_size: int, num_kernels: int = 100,
                 kernel_width: int = 5, dropout: float = 0.0,
                 batchnorm: bool = True, dtype=np.float64):
        self.bank = DecoderBank(rng, num_relations, embedding_size, num_kernels,
                                kernel_width, dropout, batchnorm, dtype)

    def params(self) -> list[Parameter]:
        return self.bank.params()

    def score_batch(self, tape: Tape, entities: TapeNode, s_idx: Array,
                    r_idx: Array) -> TapeNode:
        bank = self.bank
        es = tape.gather_rows(entities, s_idx)
        er = tape.gather_rows(tape.leaf(bank.rel_emb), r_idx)
        stacked = tape.stack_pair(es, er)
        if bank.dropout > 0.0:
            stacked = tape.dropout(stacked, bank.dropout)
        m = conv_pair_op(tape, stacked, tape.leaf(bank.kernels))
        if bank.bn_fm is not None:
            m = bank.bn_fm.apply(tape, m, (0, 2))
        if bank.dropout > 0.0:
            m = tape.dropout(m, bank.dropout)
        b = s_idx.shape[0]
        z = tape.matmul(tape.reshape(m, (b, -1)), tape.leaf(bank.proj))
        if bank.bn_proj is not None:
            z = bank.bn_proj.apply(tape, z, (0,))
        h = tape.relu(z)
        if bank.dropout > 0.0:
            h = tape.dropout(h, bank.dropout)
        return tape.matmul_nt(h, entities)

    def score_batch_eval(self, entities: Array, s_idx: Array, r_idx: Array) -> Array:
        return score_all(entities[s_idx], self.bank.rel_emb.value[r_idx],
                         entities, self.bank, mode="eval")
