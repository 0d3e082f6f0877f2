"""End-to-end finite-difference verification on in-memory toy graphs."""
from __future__ import annotations

import numpy as np

from .adjacency import build_adjacency
from .autodiff import Tape, grad_check
from .data import Dataset, add_reciprocal, build_filter_index, build_store, build_vocab
from .model import Model, build_model
from .synth import random_toy_triples
from .training import QueryBatch, smoothed_labels, train_queries


def toy_dataset(seed: int = 0, n_entities: int = 6, n_relations: int = 3,
                n_triples: int | None = None, shared_splits: bool = True) -> Dataset:
    """Small in-memory dataset; with shared_splits all three splits coincide."""
    rng = np.random.default_rng(seed)
    if n_triples is None:
        n_triples = 3 * n_entities
    triples = random_toy_triples(rng, n_entities, n_relations, n_triples)
    if shared_splits:
        raw = {"train": triples, "valid": triples, "test": triples}
    else:
        n_eval = max(1, len(triples) // 10)
        raw = {"train": triples[2 * n_eval:], "valid": triples[:n_eval],
               "test": triples[n_eval:2 * n_eval]}
    vocab = build_vocab(raw)
    store = build_store(raw, vocab)
    store, vocab = add_reciprocal(store, vocab)
    return Dataset(vocab, store, build_filter_index(store, vocab))


def end_to_end_gradcheck(toy_size: int = 6, n_relations: int = 3, seed: int = 7,
                         embedding_size: int = 6, num_kernels: int = 3,
                         kernel_width: int = 3, layers: int = 2,
                         decoder: str = "conv", label_smoothing: float = 0.1,
                         row_normalize: bool = False,
                         h: float = 1e-5) -> dict[str, float]:
    """Finite-difference check of the full training loss on a toy graph.

    Covers every trainable parameter group: initial node features, each
    layer's weight matrix and relation weights, the decoder kernels,
    projection, and relation embeddings. Float64, dropout and batch
    normalization off. Returns worst relative error per parameter.
    """
    dataset = toy_dataset(seed, toy_size, n_relations)
    adjacency = build_adjacency(dataset.store, dataset.vocab)
    rng = np.random.default_rng(seed + 1)
    model = build_model(rng, dataset.vocab.num_entities,
                        dataset.vocab.num_relations, adjacency.num_types,
                        embedding_size, layers, num_kernels, kernel_width,
                        dropout=0.0, batchnorm=False, decoder_kind=decoder,
                        row_normalize=row_normalize, dtype=np.float64)
    queries, positives = train_queries(dataset)
    batch = QueryBatch(queries[:, 0], queries[:, 1], positives)
    labels = smoothed_labels(batch, dataset.vocab.num_entities, label_smoothing,
                             np.float64)

    def loss_fn() -> float:
        tape = Tape(mode="eval")
        scores, _ = model.score_batch(tape, adjacency, batch.subjects,
                                      batch.relations)
        loss = tape.bce_with_logits(scores, labels)
        tape.backward(loss)
        return float(loss.value)

    return grad_check(loss_fn, model.parameters(), h=h)
