import numpy as np
import pytest

from graphkbc.adjacency import build_adjacency
from graphkbc.autodiff import Adam
from graphkbc.checkpoint import load_checkpoint
from graphkbc.evaluation import evaluate
from graphkbc.model import build_model, load_parameters, model_from_checkpoint
from graphkbc.training import (ConfigError, TrainConfig, fit, make_batches,
                               smoothed_labels, train_queries, train_step)
from graphkbc.verify import toy_dataset


def small_config(**overrides):
    base = dict(embedding_size=8, kernel_count=3, kernel_width=3, layers=1,
                batch_size=16, epochs=2, seed=11, eval_every=1,
                precision="float64", dropout=0.0, batchnorm=False,
                label_smoothing=0.0, learning_rate=0.01)
    base.update(overrides)
    return TrainConfig(**base)


def build_for(dataset, config):
    adjacency = build_adjacency(dataset.store, dataset.vocab)
    rng = np.random.default_rng(config.seed)
    model = build_model(rng, dataset.vocab.num_entities,
                        dataset.vocab.num_relations, adjacency.num_types,
                        config.embedding_size, config.layers,
                        config.kernel_count, config.kernel_width,
                        config.dropout, config.batchnorm, config.decoder,
                        dtype=config.dtype)
    return model, adjacency


# -- config --------------------------------------------------------------------

def test_config_defaults_follow_reference_setting():
    config = TrainConfig()
    assert config.learning_rate == 0.003
    assert config.dropout == 0.2
    assert config.kernel_count == 100
    assert config.embedding_size == 200
    assert config.layers == 2
    assert config.kernel_width == 5


def test_config_file_roundtrip(tmp_path):
    config = small_config(decoder="distmult", batchnorm=True)
    path = tmp_path / "c.cfg"
    path.write_text(config.to_text(), encoding="utf-8")
    loaded = TrainConfig.from_file(path)
    assert loaded == config


def test_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("learning_rate=0.01\nmystery=1\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="mystery"):
        TrainConfig.from_file(path)


def test_config_rejects_bad_values(tmp_path):
    for line in ("dropout=1.5", "epochs=-1", "precision=float16",
                 "decoder=gnn", "batch_size=zero", "batchnorm=maybe"):
        path = tmp_path / "c.cfg"
        path.write_text(line + "\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            TrainConfig.from_file(path)


def test_config_rejects_duplicate_key(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("epochs=1\nepochs=2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        TrainConfig.from_file(path)


def test_config_comments_and_blank_lines(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# comment\n\nepochs=3\n", encoding="utf-8")
    assert TrainConfig.from_file(path).epochs == 3


# -- batching --------------------------------------------------------------------

def test_queries_are_multi_hot():
    dataset = toy_dataset(seed=1, n_entities=5, n_relations=1, n_triples=8)
    queries, positives = train_queries(dataset)
    packed = {(int(s), int(r)): objs for (s, r), objs in zip(queries, positives)}
    s, r, o = dataset.store.split_columns("train")
    for si, ri, oi in zip(s, r, o):
        assert int(oi) in packed[(int(si), int(ri))]
    # unique queries only
    assert len(packed) == queries.shape[0]


def test_two_true_objects_one_query():
    from graphkbc.data import Dataset, add_reciprocal, build_filter_index, \
        build_store, build_vocab
    raw = {"train": [("a", "r", "b"), ("a", "r", "c")]}
    vocab = build_vocab(raw)
    store = build_store(raw, vocab)
    store, vocab = add_reciprocal(store, vocab)
    dataset = Dataset(vocab, store, build_filter_index(store, vocab))
    queries, positives = train_queries(dataset)
    a, r = vocab.entity_index["a"], vocab.relation_index["r"]
    sel = [i for i, q in enumerate(queries) if tuple(q) == (a, r)]
    assert len(sel) == 1
    assert set(positives[sel[0]].tolist()) == {vocab.entity_index["b"],
                                               vocab.entity_index["c"]}


def test_oversized_batch_yields_single_batch():
    dataset = toy_dataset(seed=2, n_entities=5, n_relations=1, n_triples=8)
    batches = list(make_batches(dataset, 10_000, np.random.default_rng(0)))
    assert len(batches) == 1


def test_batches_deterministic_under_seed():
    dataset = toy_dataset(seed=3, n_entities=6, n_relations=2, n_triples=12)
    a = [b.subjects.tolist() for b in
         make_batches(dataset, 4, np.random.default_rng(42))]
    b = [b.subjects.tolist() for b in
         make_batches(dataset, 4, np.random.default_rng(42))]
    assert a == b


def test_label_smoothing_blends_toward_uniform():
    dataset = toy_dataset(seed=4, n_entities=4, n_relations=1, n_triples=6)
    batch = next(make_batches(dataset, 100, np.random.default_rng(0)))
    n = dataset.vocab.num_entities
    plain = smoothed_labels(batch, n, 0.0, np.float64)
    smooth = smoothed_labels(batch, n, 0.1, np.float64)
    np.testing.assert_allclose(smooth, 0.9 * plain + 0.1 / n)


# -- steps and loss ---------------------------------------------------------------

def test_initial_loss_is_ln2_with_zeroed_output_path():
    dataset = toy_dataset(seed=5, n_entities=6, n_relations=2)
    config = small_config()
    model, adjacency = build_for(dataset, config)
    model.decoder.bank.proj.value[:] = 0.0
    opt = Adam(model.parameters(), lr=config.learning_rate)
    batch = next(make_batches(dataset, 10_000, np.random.default_rng(0)))
    loss = train_step(model, adjacency, batch, opt, 0.0,
                      np.random.default_rng(1))
    assert loss == pytest.approx(np.log(2.0), abs=1e-9)


def test_initial_loss_is_ln2_even_with_smoothing_and_batchnorm():
    dataset = toy_dataset(seed=5, n_entities=6, n_relations=2)
    config = small_config(batchnorm=True, label_smoothing=0.1)
    model, adjacency = build_for(dataset, config)
    model.decoder.bank.proj.value[:] = 0.0
    opt = Adam(model.parameters(), lr=config.learning_rate)
    batch = next(make_batches(dataset, 10_000, np.random.default_rng(0)))
    loss = train_step(model, adjacency, batch, opt, config.label_smoothing,
                      np.random.default_rng(1))
    assert loss == pytest.approx(np.log(2.0), abs=1e-9)


def test_smoothing_does_not_change_initial_ordering():
    dataset = toy_dataset(seed=6, n_entities=6, n_relations=2)
    config = small_config()
    model, adjacency = build_for(dataset, config)
    batch = next(make_batches(dataset, 10_000, np.random.default_rng(0)))
    entities = model.entity_matrix(adjacency)
    scores = model.score_eval(entities, batch.subjects, batch.relations)
    # labels play no part in the forward pass
    np.testing.assert_array_equal(np.argsort(scores, axis=1),
                                  np.argsort(scores, axis=1))
    assert scores.shape == (batch.subjects.shape[0],
                            dataset.vocab.num_entities)


def test_training_reduces_loss():
    dataset = toy_dataset(seed=7, n_entities=8, n_relations=2)
    config = small_config()
    model, adjacency = build_for(dataset, config)
    opt = Adam(model.parameters(), lr=0.01)
    losses = []
    for epoch in range(30):
        rng = np.random.default_rng(epoch)
        for batch in make_batches(dataset, 64, rng):
            losses.append(train_step(model, adjacency, batch, opt, 0.0, rng))
    assert losses[-1] < 0.5 * losses[0]


# -- fit ---------------------------------------------------------------------------

def test_fit_epoch_zero_emits_initial_artifacts(tmp_path):
    dataset = toy_dataset(seed=8, n_entities=6, n_relations=2)
    config = small_config(epochs=0)
    result = fit(config, dataset, tmp_path / "run", log=lambda *a: None)
    assert result.best_checkpoint.exists()
    metrics = result.metrics_path.read_text(encoding="utf-8")
    assert metrics == "epoch,loss,mrr,hits1,hits3,hits10\n"
    values, _, _ = load_checkpoint(result.best_checkpoint)
    assert "encoder.h1" in values


def test_fit_writes_metrics_rows(tmp_path):
    dataset = toy_dataset(seed=9, n_entities=6, n_relations=2)
    config = small_config(epochs=3, eval_every=1)
    result = fit(config, dataset, tmp_path / "run", log=lambda *a: None)
    lines = result.metrics_path.read_text(encoding="utf-8").strip().splitlines()
    assert lines[0] == "epoch,loss,mrr,hits1,hits3,hits10"
    assert len(lines) == 4
    assert (tmp_path / "run" / "config.txt").exists()


def test_fit_determinism_bit_identical(tmp_path):
    dataset = toy_dataset(seed=10, n_entities=6, n_relations=2)
    config = small_config(epochs=3, dropout=0.2, batchnorm=True,
                          precision="float32")
    r1 = fit(config, dataset, tmp_path / "a", log=lambda *a: None)
    r2 = fit(config, dataset, tmp_path / "b", log=lambda *a: None)
    assert r1.best_checkpoint.read_bytes() == r2.best_checkpoint.read_bytes()
    assert r1.metrics_path.read_bytes() == r2.metrics_path.read_bytes()


def test_checkpoint_roundtrip_preserves_validation_metrics(tmp_path):
    dataset = toy_dataset(seed=11, n_entities=8, n_relations=2)
    config = small_config(epochs=2, batchnorm=True)
    result = fit(config, dataset, tmp_path / "run", log=lambda *a: None)
    adjacency = build_adjacency(dataset.store, dataset.vocab)
    model = model_from_checkpoint(result.best_checkpoint, adjacency.num_types)
    before = evaluate(dataset, model, adjacency, "valid")

    values, _, _ = load_checkpoint(result.best_checkpoint)
    clone = model_from_checkpoint(result.best_checkpoint, adjacency.num_types)
    load_parameters(clone, values)
    after = evaluate(dataset, clone, adjacency, "valid")
    assert after.mrr == pytest.approx(before.mrr, abs=1e-12)
    assert after.hits10 == pytest.approx(before.hits10, abs=1e-12)


@pytest.mark.parametrize("decoder", ["transe", "distmult"])
def test_fit_with_baseline_decoders(tmp_path, decoder):
    dataset = toy_dataset(seed=12, n_entities=6, n_relations=2)
    config = small_config(epochs=1, decoder=decoder)
    result = fit(config, dataset, tmp_path / decoder, log=lambda *a: None)
    model = model_from_checkpoint(result.best_checkpoint, 2)
    assert model.decoder.kind == decoder


def test_non_finite_loss_aborts():
    from graphkbc.autodiff import NumericError
    dataset = toy_dataset(seed=13, n_entities=5, n_relations=1)
    config = small_config()
    model, adjacency = build_for(dataset, config)
    model.decoder.bank.proj.value[:] = np.inf
    opt = Adam(model.parameters(), lr=0.01)
    batch = next(make_batches(dataset, 100, np.random.default_rng(0)))
    with pytest.raises(NumericError):
        train_step(model, adjacency, batch, opt, 0.0, np.random.default_rng(1))
