"""End-to-end 1-N training loop.

Each step runs the encoder once over the full graph, scores a mini-batch of
(subject, relation) queries against every entity, and applies binary
cross-entropy to the multi-hot label rows.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .adjacency import RelationAdjacency, build_adjacency
from .autodiff import Adam, NumericError, Tape
from .checkpoint import save_checkpoint
from .data import Dataset
from .evaluation import evaluate
from .model import Model, build_model

EARLY_STOP_PATIENCE = 20  # evaluations without a new best validation MRR

_BOOL_WORDS = {"true": True, "1": True, "yes": True,
               "false": False, "0": False, "no": False}


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.003
    dropout: float = 0.2
    embedding_size: int = 200
    kernel_count: int = 100
    kernel_width: int = 5
    layers: int = 2
    batch_size: int = 128
    epochs: int = 10
    seed: int = 17
    label_smoothing: float = 0.1
    batchnorm: bool = True
    eval_every: int = 1
    data_dir: str = ""
    precision: str = "float32"
    decoder: str = "conv"
    row_normalize: bool = False
    weight_decay: float = 0.0
    grad_clip: float = 0.0

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.embedding_size < 1 or self.kernel_count < 1 or self.kernel_width < 1:
            raise ConfigError("embedding_size, kernel_count, kernel_width must be >= 1")
        if self.layers < 0:
            raise ConfigError("layers must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must be in [0, 1)")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision must be float32 or float64")
        if self.decoder not in ("conv", "transe", "distmult"):
            raise ConfigError("decoder must be conv, transe or distmult")
        if self.weight_decay < 0 or self.grad_clip < 0:
            raise ConfigError("weight_decay and grad_clip must be >= 0")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        config = cls()
        for key, raw in mapping.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            current = getattr(config, key)
            if isinstance(current, bool):
                word = raw.strip().lower()
                if word not in _BOOL_WORDS:
                    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
                value = _BOOL_WORDS[word]
            elif isinstance(current, int):
                try:
                    value = int(raw)
                except ValueError as exc:
                    raise ConfigError(f"{key}: expected an integer, got {raw!r}") from exc
            elif isinstance(current, float):
                try:
                    value = float(raw)
                except ValueError as exc:
                    raise ConfigError(f"{key}: expected a number, got {raw!r}") from exc
            else:
                value = raw.strip()
            setattr(config, key, value)
        config.validate()
        return config

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        mapping: dict[str, str] = {}
        text = Path(path).read_text(encoding="utf-8")
        for line_no, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key=value")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key in mapping:
                raise ConfigError(f"{path}:{line_no}: duplicate key {key!r}")
            mapping[key] = raw
        return cls.from_mapping(mapping)


@dataclass
class QueryBatch:
    """(s, r) queries with multi-hot labels over the training objects."""

    subjects: np.ndarray
    relations: np.ndarray
    positives: list[np.ndarray]

    def label_matrix(self, num_entities: int, dtype) -> np.ndarray:
        labels = np.zeros((self.subjects.shape[0], num_entities), dtype=dtype)
        for i, objs in enumerate(self.positives):
            labels[i, objs] = 1.0
        return labels


def train_queries(dataset: Dataset) -> tuple[np.ndarray, list[np.ndarray]]:
    """Unique (s, r) training queries with their true-object lists."""
    s, r, o = dataset.store.split_columns("train")
    if s.size == 0:
        raise ValueError("training split is empty")
    packed = s * dataset.vocab.num_relations + r
    order = np.lexsort((o, packed))
    packed, o = packed[order], o[order]
    starts = np.flatnonzero(np.r_[True, packed[1:] != packed[:-1]])
    bounds = np.append(starts, packed.size)
    keys = packed[starts]
    queries = np.stack([keys // dataset.vocab.num_relations,
                        keys % dataset.vocab.num_relations], axis=1)
    positives = [o[bounds[i]:bounds[i + 1]] for i in range(keys.size)]
    return queries, positives


def make_batches(dataset: Dataset, batch_size: int, rng: np.random.Generator,
                 queries: np.ndarray | None = None,
                 positives: list[np.ndarray] | None = None):
    """Shuffled QueryBatch stream covering every unique training query once."""
    if queries is None or positives is None:
        queries, positives = train_queries(dataset)
    perm = rng.permutation(queries.shape[0])
    for start in range(0, perm.size, batch_size):
        idx = perm[start:start + batch_size]
        yield QueryBatch(queries[idx, 0], queries[idx, 1],
                         [positives[i] for i in idx])


def smoothed_labels(batch: QueryBatch, num_entities: int, smoothing: float,
                    dtype) -> np.ndarray:
    labels = batch.label_matrix(num_entities, dtype)
    if smoothing > 0.0:
        labels = (1.0 - smoothing) * labels + smoothing / num_entities
    return labels.astype(dtype, copy=False)


def train_step(model: Model, adjacency: RelationAdjacency, batch: QueryBatch,
               optimizer: Adam, label_smoothing: float,
               rng: np.random.Generator) -> float:
    """One optimization step; returns the batch loss."""
    tape = Tape(mode="train", rng=rng)
    scores, _ = model.score_batch(tape, adjacency, batch.subjects, batch.relations)
    labels = smoothed_labels(batch, model.encoder.h1.shape[0], label_smoothing,
                             scores.value.dtype)
    loss = tape.bce_with_logits(scores, labels)
    value = float(loss.value)
    if not np.isfinite(value):
        raise NumericError(
            f"non-finite loss {value} (batch of {batch.subjects.shape[0]} queries)")
    tape.backward(loss)
    optimizer.step()
    return value


@dataclass
class FitResult:
    best_checkpoint: Path
    metrics_path: Path
    best_mrr: float
    epochs_run: int


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch]))


def fit(config: TrainConfig, dataset: Dataset, out_dir,
        log=print) -> FitResult:
    """Train per config, evaluating on the validation split periodically.

    Writes metrics.csv, the resolved config, and the best-validation-MRR
    checkpoint under out_dir. All randomness derives from config.seed.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.to_text(), encoding="utf-8")

    adjacency = build_adjacency(dataset.store, dataset.vocab)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    model = build_model(
        rng, dataset.vocab.num_entities, dataset.vocab.num_relations,
        adjacency.num_types, config.embedding_size, config.layers,
        config.kernel_count, config.kernel_width, config.dropout,
        config.batchnorm, config.decoder, row_normalize=config.row_normalize,
        dtype=config.dtype)
    optimizer = Adam(model.parameters(), lr=config.learning_rate,
                     weight_decay=config.weight_decay, grad_clip=config.grad_clip)

    queries, positives = train_queries(dataset)
    metrics_path = out / "metrics.csv"
    best_path = out / "best.ckpt"
    lines = ["epoch,loss,mrr,hits1,hits3,hits10"]
    best_mrr = -1.0
    evals_since_best = 0
    epochs_run = 0
    evaluated = False
    save_checkpoint(best_path, model.parameters(), optimizer)

    start = time.time()
    for epoch in range(1, config.epochs + 1):
        epoch_rng = _epoch_rng(config.seed, epoch)
        losses = []
        for batch in make_batches(dataset, config.batch_size, epoch_rng,
                                  queries, positives):
            losses.append(train_step(model, adjacency, batch, optimizer,
                                     config.label_smoothing, epoch_rng))
        epochs_run = epoch
        mean_loss = float(np.mean(losses))
        if epoch % config.eval_every == 0:
            evaluated = True
            report = evaluate(dataset, model, adjacency, "valid")
            lines.append(f"{epoch},{mean_loss:.10g},{report.mrr:.10g},"
                         f"{report.hits1:.10g},{report.hits3:.10g},{report.hits10:.10g}")
            log(f"epoch {epoch:4d}  loss {mean_loss:.5f}  mrr {report.mrr:.4f}  "
                f"hits@10 {report.hits10:.4f}  ({time.time() - start:.1f}s)")
            if report.mrr > best_mrr:
                best_mrr = report.mrr
                evals_since_best = 0
                save_checkpoint(best_path, model.parameters(), optimizer)
            else:
                evals_since_best += 1
                if evals_since_best >= EARLY_STOP_PATIENCE:
                    log(f"early stop at epoch {epoch}: no improvement in "
                        f"{EARLY_STOP_PATIENCE} evaluations")
                    break
        else:
            log(f"epoch {epoch:4d}  loss {mean_loss:.5f}  "
                f"({time.time() - start:.1f}s)")

    if epochs_run > 0 and not evaluated:
        # trained but never scored: keep the final parameters, not the initial ones
        save_checkpoint(best_path, model.parameters(), optimizer)
    metrics_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return FitResult(best_path, metrics_path, best_mrr, epochs_run)
