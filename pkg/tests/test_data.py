import numpy as np
import pytest

from graphkbc.data import (DataFormatError, add_reciprocal, build_filter_index,
                           build_store, build_vocab, dataset_stats, load_dataset,
                           merge_attributes, parse_triples, prepare_dataset,
                           save_dataset)


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def raw(*triples):
    return list(triples)


# -- parsing ----------------------------------------------------------------

def test_parse_simple_line(tmp_path):
    f = tmp_path / "t.txt"
    write_lines(f, ["a\tr1\tb"])
    assert parse_triples(f) == [("a", "r1", "b")]


def test_parse_empty_file(tmp_path):
    f = tmp_path / "t.txt"
    f.write_text("", encoding="utf-8")
    assert parse_triples(f) == []


def test_parse_arity_error_carries_line_number(tmp_path):
    f = tmp_path / "t.txt"
    write_lines(f, ["a\tr1\tb", "a\tr1"])
    with pytest.raises(DataFormatError) as exc:
        parse_triples(f)
    assert exc.value.line_no == 2


def test_parse_crlf_and_whitespace(tmp_path):
    f = tmp_path / "t.txt"
    f.write_bytes(b"a \tr1\t b\r\n\r\nc\tr2\td\n")
    assert parse_triples(f) == [("a", "r1", "b"), ("c", "r2", "d")]


def test_parse_missing_file(tmp_path):
    with pytest.raises(DataFormatError):
        parse_triples(tmp_path / "nope.txt")


# -- vocabulary and store ----------------------------------------------------

def test_vocab_smallest_graph():
    vocab = build_vocab({"train": raw(("a", "r", "b"))})
    assert vocab.num_entities == 2
    assert vocab.num_relations == 1


def test_vocab_covers_all_splits():
    vocab = build_vocab({
        "train": raw(("a", "r", "b")),
        "valid": raw(("c", "q", "a")),
        "test": raw(("b", "r", "d")),
    })
    assert vocab.num_entities == 4
    assert vocab.num_relations == 2


def test_vocab_requires_training_triples():
    with pytest.raises(DataFormatError):
        build_vocab({"train": []})


def test_vocab_ids_dense_and_stable():
    rawd = {"train": raw(("b", "r", "a"), ("a", "q", "c"))}
    v1 = build_vocab(rawd)
    v2 = build_vocab(rawd)
    assert v1.entity_names == v2.entity_names == ["b", "a", "c"]
    assert sorted(v1.entity_index.values()) == [0, 1, 2]


def test_store_roundtrip_and_dedup():
    rawd = {"train": raw(("a", "r", "b"), ("a", "r", "b"), ("b", "r", "a"))}
    vocab = build_vocab(rawd)
    store = build_store(rawd, vocab)
    assert len(store) == 2  # duplicate collapsed
    decoded = [vocab.decode(*t) for t in store.triples]
    assert decoded == [("a", "r", "b"), ("b", "r", "a")]


def test_store_determinism():
    rawd = {"train": raw(("a", "r", "b"), ("c", "q", "a")),
            "valid": raw(("a", "q", "c")), "test": raw(("b", "r", "c"))}
    s1 = build_store(rawd, build_vocab(rawd))
    s2 = build_store(rawd, build_vocab(rawd))
    np.testing.assert_array_equal(s1.triples, s2.triples)
    np.testing.assert_array_equal(s1.splits, s2.splits)


# -- reciprocal relations ----------------------------------------------------

def test_add_reciprocal_definition():
    rawd = {"train": raw(("a", "r", "b"))}
    vocab = build_vocab(rawd)
    store = build_store(rawd, vocab)
    store, vocab = add_reciprocal(store, vocab)
    assert vocab.num_relations == 2
    decoded = [vocab.decode(*t) for t in store.triples]
    assert ("b", "r_inv", "a") in decoded


def test_add_reciprocal_doubles_counts():
    rawd = {"train": raw(("a", "r", "b"), ("b", "q", "c"), ("c", "r", "a"))}
    vocab = build_vocab(rawd)
    store = build_store(rawd, vocab)
    n_triples, n_relations = len(store), vocab.num_relations
    store, vocab = add_reciprocal(store, vocab)
    assert len(store) == 2 * n_triples
    assert vocab.num_relations == 2 * n_relations


def test_add_reciprocal_twice_is_an_error():
    rawd = {"train": raw(("a", "r", "b"))}
    vocab = build_vocab(rawd)
    store = build_store(rawd, vocab)
    store, vocab = add_reciprocal(store, vocab)
    with pytest.raises(ValueError):
        add_reciprocal(store, vocab)


def test_reciprocal_preserves_split_labels():
    rawd = {"train": raw(("a", "r", "b")), "valid": raw(("b", "r", "c")),
            "test": raw(("c", "r", "a"))}
    vocab = build_vocab(rawd)
    store = build_store(rawd, vocab)
    store, vocab = add_reciprocal(store, vocab)
    for split in ("train", "valid", "test"):
        assert store.split_count(split) == 2


# -- attribute merge ---------------------------------------------------------

def attr_fixture():
    rawd = {"train": raw(("a", "r", "b"), ("b", "r", "c"))}
    vocab = build_vocab(rawd)
    store = build_store(rawd, vocab)
    return store, vocab


def test_merge_no_attributes_is_identity():
    store, vocab = attr_fixture()
    merged, vocab2, stats = merge_attributes(store, vocab, [])
    assert merged is store
    assert stats.retained == 0


def test_merge_shares_one_node_per_attribute_type():
    store, vocab = attr_fixture()
    attrs = raw(("a", "has_flag", "flagged"), ("b", "has_flag", "flagged"))
    merged, vocab, stats = merge_attributes(store, vocab, attrs)
    assert stats.new_attribute_nodes == 1
    assert stats.retained == 2
    assert vocab.num_entities == 4  # a, b, c + one attribute node
    assert merged.split_count("train") == 4
    assert np.count_nonzero(merged.attribute_flags) == 2


def test_merge_drops_unknown_entities_with_count():
    store, vocab = attr_fixture()
    attrs = raw(("ghost", "has_flag", "flagged"), ("a", "has_flag", "flagged"))
    merged, vocab, stats = merge_attributes(store, vocab, attrs)
    assert stats.dropped_unknown_entity == 1
    assert stats.retained == 1
    assert "ghost" not in vocab.entity_index


def test_merge_counts_duplicates():
    store, vocab = attr_fixture()
    attrs = raw(("a", "has_flag", "flagged"), ("a", "has_flag", "flagged"))
    _, _, stats = merge_attributes(store, vocab, attrs)
    assert stats.retained == 1
    assert stats.dropped_duplicate == 1


def test_merge_conservation_arithmetic():
    store, vocab = attr_fixture()
    entities_before = vocab.num_entities
    train_before = store.split_count("train")
    attrs = raw(("a", "p1", "t1"), ("b", "p1", "t2"), ("c", "p2", "t1"))
    merged, vocab, stats = merge_attributes(store, vocab, attrs)
    assert vocab.num_entities == entities_before + 2          # t1, t2
    assert merged.split_count("train") == train_before + stats.retained
    assert vocab.num_base_relations == 1 + 2                  # r + p1, p2


def test_merge_after_reciprocal_rejected():
    store, vocab = attr_fixture()
    store, vocab = add_reciprocal(store, vocab)
    with pytest.raises(ValueError):
        merge_attributes(store, vocab, raw(("a", "p", "t")))


def test_merged_attributes_join_training_split_only():
    store, vocab = attr_fixture()
    merged, vocab, _ = merge_attributes(store, vocab, raw(("a", "p", "t")))
    assert merged.split_count("valid") == 0
    assert merged.split_count("test") == 0


# -- filter index ------------------------------------------------------------

def test_filter_index_definition():
    rawd = {"train": raw(("a", "r", "b"), ("a", "r", "c"))}
    vocab = build_vocab(rawd)
    store = build_store(rawd, vocab)
    store, vocab = add_reciprocal(store, vocab)
    index = build_filter_index(store, vocab)
    a, r = vocab.entity_index["a"], vocab.relation_index["r"]
    b, c = vocab.entity_index["b"], vocab.entity_index["c"]
    assert set(index.objects_for(a, r)) == {b, c}


def test_filter_index_unknown_query_is_empty():
    rawd = {"train": raw(("a", "r", "b"))}
    vocab = build_vocab(rawd)
    store = build_store(rawd, vocab)
    store, vocab = add_reciprocal(store, vocab)
    index = build_filter_index(store, vocab)
    assert index.objects_for(1, 0).size == 0


def test_filter_index_covers_every_split():
    rawd = {"train": raw(("a", "r", "b")), "valid": raw(("a", "r", "c")),
            "test": raw(("x", "q", "y"))}
    vocab = build_vocab(rawd)
    store = build_store(rawd, vocab)
    store, vocab = add_reciprocal(store, vocab)
    index = build_filter_index(store, vocab)
    x, q = vocab.entity_index["x"], vocab.relation_index["q"]
    assert vocab.entity_index["y"] in index.objects_for(x, q)
    a, r = vocab.entity_index["a"], vocab.relation_index["r"]
    assert set(index.objects_for(a, r)) == {vocab.entity_index["b"],
                                            vocab.entity_index["c"]}


# -- full pipeline and serialization ------------------------------------------

def write_dataset(tmp_path):
    write_lines(tmp_path / "train.txt",
                ["a\tr\tb", "b\tr\tc", "c\tq\ta", "a\tq\tc"])
    write_lines(tmp_path / "valid.txt", ["a\tr\tc"])
    write_lines(tmp_path / "test.txt", ["b\tq\ta"])
    write_lines(tmp_path / "attrs.txt", ["a\thas\tflag", "b\thas\tflag"])
    return tmp_path


def test_prepare_dataset_pipeline(tmp_path):
    d = write_dataset(tmp_path)
    dataset = prepare_dataset(d / "train.txt", d / "valid.txt", d / "test.txt",
                              d / "attrs.txt")
    vocab = dataset.vocab
    assert vocab.has_reciprocals
    assert vocab.num_base_relations == 3      # r, q, has
    assert vocab.num_relations == 6
    assert vocab.num_entities == 4            # a, b, c + flag
    assert dataset.store.split_count("train") == 2 * (4 + 2)


def test_save_load_roundtrip(tmp_path):
    d = write_dataset(tmp_path)
    dataset = prepare_dataset(d / "train.txt", d / "valid.txt", d / "test.txt",
                              d / "attrs.txt")
    save_dataset(dataset, tmp_path / "out")
    loaded = load_dataset(tmp_path / "out")
    assert loaded.vocab.entity_names == dataset.vocab.entity_names
    assert loaded.vocab.relation_names == dataset.vocab.relation_names
    np.testing.assert_array_equal(loaded.store.triples, dataset.store.triples)
    np.testing.assert_array_equal(loaded.store.splits, dataset.store.splits)
    a, r = loaded.vocab.entity_index["a"], loaded.vocab.relation_index["r"]
    np.testing.assert_array_equal(loaded.filter_index.objects_for(a, r),
                                  dataset.filter_index.objects_for(a, r))


def test_save_is_byte_deterministic(tmp_path):
    d = write_dataset(tmp_path)
    for out in ("out1", "out2"):
        dataset = prepare_dataset(d / "train.txt", d / "valid.txt",
                                  d / "test.txt", d / "attrs.txt")
        save_dataset(dataset, tmp_path / out)
    for name in ("vocab.json", "stats.txt", "stats.csv"):
        assert (tmp_path / "out1" / name).read_bytes() == \
               (tmp_path / "out2" / name).read_bytes()


def test_stats_report_contents(tmp_path):
    d = write_dataset(tmp_path)
    dataset = prepare_dataset(d / "train.txt", d / "valid.txt", d / "test.txt",
                              d / "attrs.txt")
    text, csv = dataset_stats(dataset)
    assert "entities" in text
    lines = dict(line.split(",") for line in csv.strip().splitlines()[1:])
    assert lines["entities"] == "4"
    assert lines["relation_types"] == "3"
    assert lines["train_edges"] == "6"
    assert lines["valid_edges"] == "1"
    assert lines["attribute_triples"] == "2"
