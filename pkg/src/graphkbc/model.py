"""Encoder/decoder assembly and checkpoint-based reconstruction."""
from __future__ import annotations

import numpy as np

from .adjacency import RelationAdjacency
from .autodiff import Parameter, Tape, TapeNode
from .baselines import DistMultDecoder, TransEDecoder
from .checkpoint import CheckpointError, load_checkpoint
from .decoder import ConvDecoder
from .encoder import GraphEncoder


class Model:
    """A graph encoder feeding one of the interchangeable decoders."""

    def __init__(self, encoder: GraphEncoder, decoder):
        self.encoder = encoder
        self.decoder = decoder

    def parameters(self) -> list[Parameter]:
        return self.encoder.params() + self.decoder.params()

    def dtype(self):
        return self.encoder.h1.dtype

    def score_batch(self, tape: Tape, adjacency: RelationAdjacency,
                    s_idx, r_idx) -> tuple[TapeNode, TapeNode]:
        """Tape-recorded scores of a query batch against all entities."""
        entities = self.encoder.encode(tape, adjacency)
        scores = self.decoder.score_batch(tape, entities, s_idx, r_idx)
        return scores, entities

    def entity_matrix(self, adjacency: RelationAdjacency) -> np.ndarray:
        return self.encoder.encode_eval(adjacency)

    def score_eval(self, entities: np.ndarray, s_idx, r_idx) -> np.ndarray:
        return self.decoder.score_batch_eval(entities, np.asarray(s_idx),
                                             np.asarray(r_idx))


def build_model(rng: np.random.Generator, num_entities: int,
                num_relations: int, num_edge_types: int, embedding_size: int,
                layers: int = 2, num_kernels: int = 100, kernel_width: int = 5,
                dropout: float = 0.0, batchnorm: bool = True,
                decoder_kind: str = "conv", transe_p: int = 2,
                row_normalize: bool = False, dtype=np.float64) -> Model:
    encoder = GraphEncoder(rng, num_entities, num_edge_types, embedding_size,
                           layers, dropout, "relu", row_normalize, dtype)
    if decoder_kind == "conv":
        decoder = ConvDecoder(rng, num_relations, embedding_size, num_kernels,
                              kernel_width, dropout, batchnorm, dtype)
    elif decoder_kind == "transe":
        decoder = TransEDecoder(rng, num_relations, embedding_size, transe_p, dtype)
    elif decoder_kind == "distmult":
        decoder = DistMultDecoder(rng, num_relations, embedding_size, dtype)
    else:
        raise ValueError(f"unknown decoder kind {decoder_kind!r}")
    return Model(encoder, decoder)


def model_from_checkpoint(path, num_edge_types: int,
                          row_normalize: bool = False) -> Model:
    """Rebuild a model from a checkpoint; architecture is read off the names.

    Layer count, widths, kernel shape, decoder kind, and batch-norm presence
    are all recoverable from parameter names and shapes, so evaluation needs
    no side-channel configuration.
    """
    values, dtype, _ = load_checkpoint(path)
    if "encoder.h1" not in values:
        raise CheckpointError(f"{path}: missing encoder.h1")
    num_entities, embedding_size = values["encoder.h1"].shape
    layers = sum(1 for name in values if name.endswith(".weight")
                 and name.startswith("encoder.layer"))
    rng = np.random.default_rng(0)  # placeholder init, overwritten below

    if "decoder.kernels" in values:
        c, _, k = values["decoder.kernels"].shape
        num_relations = values["decoder.rel_emb"].shape[0]
        model = build_model(rng, num_entities, num_relations, num_edge_types,
                            embedding_size, layers, c, k,
                            batchnorm="decoder.bn_fm.gamma" in values,
                            decoder_kind="conv", row_normalize=row_normalize,
                            dtype=dtype)
    elif "decoder.transe.rel_emb" in values:
        num_relations = values["decoder.transe.rel_emb"].shape[0]
        model = build_model(rng, num_entities, num_relations, num_edge_types,
                            embedding_size, layers, decoder_kind="transe",
                            transe_p=int(values["decoder.transe.pnorm"][0]),
                            row_normalize=row_normalize, dtype=dtype)
    elif "decoder.distmult.rel_emb" in values:
        num_relations = values["decoder.distmult.rel_emb"].shape[0]
        model = build_model(rng, num_entities, num_relations, num_edge_types,
                            embedding_size, layers, decoder_kind="distmult",
                            row_normalize=row_normalize, dtype=dtype)
    else:
        raise CheckpointError(f"{path}: no recognizable decoder parameters")

    load_parameters(model, values, path)
    return model


def load_parameters(model: Model, values: dict[str, np.ndarray], path="") -> None:
    params = {p.name: p for p in model.parameters()}
    missing = sorted(set(params) - set(values))
    extra = sorted(set(values) - set(params))
    if missing or extra:
        raise CheckpointError(
            f"{path}: parameter mismatch (missing {missing}, unexpected {extra})")
    for name, p in params.items():
        if values[name].shape != p.value.shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {name}: "
                f"{values[name].shape} vs {p.value.shape}")
        p.value = values[name].astype(p.dtype, copy=True)
        p.grad = np.zeros_like(p.value)
