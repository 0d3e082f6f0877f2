"""Reference scoring functions: translation distance and trilinear product.

Both are exposed as plain vector functions and as drop-in decoders for the
1-N training pipeline, sharing the ranking convention that higher is better.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Array, Parameter, Tape, TapeNode, gaussian_init

_NORM_EPS = 1e-12  # keeps the L2 gradient finite at exact coincidence


def transe_score(e_s: Array, e_r: Array, e_o: Array, p: int = 2) -> float:
    """Negated p-norm of (e_s + e_r - e_o); 0 is a perfect translation."""
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    diff = np.asarray(e_s) + np.asarray(e_r) - np.asarray(e_o)
    if p == 1:
        return float(-np.sum(np.abs(diff)))
    return float(-np.sqrt(np.sum(diff * diff)))


def distmult_score(e_s: Array, e_r: Array, e_o: Array) -> float:
    """Trilinear product sum_k e_s(k) * e_r(k) * e_o(k)."""
    return float(np.sum(np.asarray(e_s) * np.asarray(e_r) * np.asarray(e_o)))


def _transe_all_fwd(q: Array, entities: Array, p: int) -> Array:
    """(B, F) queries against (N, F) entities -> (B, N) negated distances."""
    diff = q[:, None, :] - entities[None, :, :]
    if p == 1:
        return -np.sum(np.abs(diff), axis=2)
    return -np.sqrt(np.sum(diff * diff, axis=2) + _NORM_EPS)


class TransEDecoder:
    """Translation-distance decoder for the 1-N pipeline."""

    kind = "transe"

    def __init__(self, rng: np.random.Generator, num_relations: int,
                 embedding_size: int, p: int = 2, dtype=np.float64):
        if p not in (1, 2):
            raise ValueError("p must be 1 or 2")
        self.rel_emb = Parameter("decoder.transe.rel_emb",
                                 gaussian_init(rng, (num_relations, embedding_size),
                                               std=0.1, dtype=dtype))
        self.pnorm = Parameter("decoder.transe.pnorm",
                               np.asarray([float(p)], dtype=dtype), trainable=False)

    @property
    def p(self) -> int:
        return int(self.pnorm.value[0])

    def params(self) -> list[Parameter]:
        return [self.rel_emb, self.pnorm]

    def score_batch(self, tape: Tape, entities: TapeNode, s_idx: Array,
                    r_idx: Array) -> TapeNode:
        es = tape.gather_rows(entities, s_idx)
        er = tape.gather_rows(tape.leaf(self.rel_emb), r_idx)
        q = tape.add(es, er)
        qv, ev, p = q.value, entities.value, self.p
        scores = _transe_all_fwd(qv, ev, p)

        def vjp(g):
            diff = qv[:, None, :] - ev[None, :, :]
            if p == 1:
                d = -np.sign(diff)
            else:
                d = -diff / (-scores[:, :, None] + _NORM_EPS)
            gq = np.einsum("bn,bnf->bf", g, d)
            ge = -np.einsum("bn,bnf->nf", g, d)
            return gq, ge

        return tape.record("transe_all", scores, (q, entities), vjp)

    def score_batch_eval(self, entities: Array, s_idx: Array, r_idx: Array) -> Array:
        q = entities[s_idx] + self.rel_emb.value[r_idx]
        return _transe_all_fwd(q, entities, self.p)


class DistMultDecoder:
    """Trilinear-product decoder for the 1-N pipeline."""

    kind = "distmult"

    def __init__(self, rng: np.random.Generator, num_relations: int,
                 embedding_size: int, dtype=np.float64):
        self.rel_emb = Parameter("decoder.distmult.rel_emb",
                                 gaussian_init(rng, (num_relations, embedding_size),
                                               std=0.1, dtype=dtype))

    def params(self) -> list[Parameter]:
        return [self.rel_emb]

    def score_batch(self, tape: Tape, entities: TapeNode, s_idx: Array,
                    r_idx: Array) -> TapeNode:
        es = tape.gather_rows(entities, s_idx)
        er = tape.gather_rows(tape.leaf(self.rel_emb), r_idx)
        return tape.matmul_nt(tape.mul(es, er), entities)

    def score_batch_eval(self, entities: Array, s_idx: Array, r_idx: Array) -> Array:
        return (entities[s_idx] * self.rel_emb.value[r_idx]) @ entities.T
