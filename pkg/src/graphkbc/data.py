"""Triple ingestion: vocabularies, reciprocal relations, attribute nodes.

The on-disk input is the usual benchmark layout: one `head<TAB>relation<TAB>tail`
line per triple, UTF-8, for each of the train/valid/test splits, plus an
optional attribute file of the same shape whose third field names the
attribute TYPE (one graph node is created per distinct type).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

Array = np.ndarray

SPLITS = ("train", "valid", "test")
RECIPROCAL_SUFFIX = "_inv"


class DataFormatError(ValueError):
    """Malformed input file; carries path and 1-based line number."""

    def __init__(self, message: str, path=None, line_no: int | None = None):
        where = f"{path}:{line_no}: " if path is not None else ""
        super().__init__(f"{where}{message}")
        self.path = path
        self.line_no = line_no


@dataclass
class Vocabulary:
    """Dense 0-based ids for entities and relations, stable in input order."""

    entity_names: list[str] = field(default_factory=list)
    relation_names: list[str] = field(default_factory=list)
    entity_index: dict[str, int] = field(default_factory=dict)
    relation_index: dict[str, int] = field(default_factory=dict)
    num_base_relations: int = 0          # base + attribute relations, no reciprocals
    has_reciprocals: bool = False
    attribute_types: list[str] = field(default_factory=list)

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    def add_entity(self, name: str) -> int:
        idx = self.entity_index.get(name)
        if idx is None:
            idx = len(self.entity_names)
            self.entity_index[name] = idx
            self.entity_names.append(name)
        return idx

    def add_relation(self, name: str) -> int:
        idx = self.relation_index.get(name)
        if idx is None:
            idx = len(self.relation_names)
            self.relation_index[name] = idx
            self.relation_names.append(name)
        return idx

    def decode(self, s: int, r: int, o: int) -> tuple[str, str, str]:
        return self.entity_names[s], self.relation_names[r], self.entity_names[o]


@dataclass
class TripleStore:
    """Integer triples with split labels and attribute-origin flags."""

    triples: Array                      # (n, 3) int64 columns s, r, o
    splits: Array                       # (n,) uint8 index into SPLITS
    attribute_flags: Array              # (n,) bool

    def __len__(self) -> int:
        return self.triples.shape[0]

    def split_mask(self, split: str) -> Array:
        return self.splits == SPLITS.index(split)

    def split_triples(self, split: str) -> Array:
        return self.triples[self.split_mask(split)]

    def split_columns(self, split: str) -> tuple[Array, Array, Array]:
        t = self.split_triples(split)
        return t[:, 0], t[:, 1], t[:, 2]

    def split_count(self, split: str) -> int:
        return int(np.count_nonzero(self.split_mask(split)))


class FilterIndex:
    """(subject, relation) -> all object ids known true in any split."""

    def __init__(self, keys_s: Array, keys_r: Array, offsets: Array, objects: Array,
                 num_relations: int):
        self._packed = keys_s.astype(np.int64) * num_relations + keys_r
        self._offsets = offsets
        self._objects = objects
        self._num_relations = num_relations

    @classmethod
    def from_store(cls, store: TripleStore, num_relations: int) -> "FilterIndex":
        s, r, o = store.triples[:, 0], store.triples[:, 1], store.triples[:, 2]
        packed = s.astype(np.int64) * num_relations + r
        order = np.lexsort((o, packed))
        packed, o = packed[order], o[order]
        boundaries = np.flatnonzero(np.r_[True, packed[1:] != packed[:-1]])
        keys = packed[boundaries]
        offsets = np.append(boundaries, packed.size)
        return cls(keys // num_relations, keys % num_relations, offsets, o,
                   num_relations)

    def objects_for(self, s: int, r: int) -> Array:
        """Known-true objects for (s, r); empty array when the query is unseen."""
        packed = int(s) * self._num_relations + int(r)
        i = np.searchsorted(self._packed, packed)
        if i == self._packed.size or self._packed[i] != packed:
            return np.empty(0, dtype=np.int64)
        return self._objects[self._offsets[i]:self._offsets[i + 1]]

    @property
    def num_queries(self) -> int:
        return self._packed.size


def build_filter_index(store: TripleStore, vocab: Vocabulary) -> FilterIndex:
    """Candidate-filter index over the union of all splits."""
    return FilterIndex.from_store(store, vocab.num_relations)


# ---------------------------------------------------------------------------
# parsing and construction

def parse_triples(path, split: str | None = None) -> list[tuple[str, str, str]]:
    """Read raw string triples from a tab-separated file, in file order.

    Empty lines are skipped; fields are whitespace-trimmed; no deduplication.
    Raises DataFormatError with the offending line number on malformed rows.
    """
    path = Path(path)
    triples: list[tuple[str, str, str]] = []
    try:
        fh = path.open("r", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot read triple file: {exc}", path) from exc
    with fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataFormatError(
                    f"expected 3 tab-separated fields, got {len(parts)}",
                    path, line_no)
            h, r, t = (p.strip() for p in parts)
            if not h or not r or not t:
                raise DataFormatError("empty field in triple", path, line_no)
            triples.append((h, r, t))
    return triples


def build_vocab(raw_by_split: dict[str, list[tuple[str, str, str]]]) -> Vocabulary:
    """Assign ids to every entity/relation string in any split, train first."""
    if not raw_by_split.get("train"):
        raise DataFormatError("training split is empty")
    vocab = Vocabulary()
    for split in SPLITS:
        for h, r, t in raw_by_split.get(split, ()):
            vocab.add_entity(h)
            vocab.add_relation(r)
            vocab.add_entity(t)
    vocab.num_base_relations = vocab.num_relations
    return vocab


def build_store(raw_by_split: dict[str, list[tuple[str, str, str]]],
                vocab: Vocabulary) -> TripleStore:
    """Encode raw triples; duplicates within a split collapse to one."""
    rows, split_ids = [], []
    for si, split in enumerate(SPLITS):
        seen: set[tuple[int, int, int]] = set()
        for h, r, t in raw_by_split.get(split, ()):
            enc = (vocab.entity_index[h], vocab.relation_index[r],
                   vocab.entity_index[t])
            if enc in seen:
                continue
            seen.add(enc)
            rows.append(enc)
            split_ids.append(si)
    triples = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    return TripleStore(triples, np.asarray(split_ids, dtype=np.uint8),
                       np.zeros(len(rows), dtype=bool))


def add_reciprocal(store: TripleStore, vocab: Vocabulary) -> tuple[TripleStore, Vocabulary]:
    """Append r_inv for every relation and (o, r_inv, s) for every triple.

    Split labels and attribute flags carry over; relation count doubles.
    """
    if vocab.has_reciprocals:
        raise ValueError("reciprocal relations were already added")
    base = vocab.num_relations
    for name in list(vocab.relation_names):
        inv = name + RECIPROCAL_SUFFIX
        if inv in vocab.relation_index:
            raise ValueError(f"relation name collision for reciprocal {inv!r}")
        vocab.add_relation(inv)
    vocab.has_reciprocals = True

    recl = store.triples[:, [2, 1, 0]].copy()
    recl[:, 1] += base
    triples = np.concatenate([store.triples, recl])
    splits = np.concatenate([store.splits, store.splits])
    flags = np.concatenate([store.attribute_flags, store.attribute_flags])
    return TripleStore(triples, splits, flags), vocab


@dataclass
class AttributeMergeStats:
    retained: int = 0
    dropped_unknown_entity: int = 0
    dropped_duplicate: int = 0
    new_attribute_nodes: int = 0
    new_attribute_relations: int = 0


def merge_attributes(store: TripleStore, vocab: Vocabulary,
                     raw_attributes: list[tuple[str, str, str]],
                     ) -> tuple[TripleStore, Vocabulary, AttributeMergeStats]:
    """Fold attribute triples into the training split as attribute nodes.

    Each distinct attribute TYPE becomes exactly one new entity node; rows
    whose entity is unknown are dropped and counted. Must run before
    reciprocal relations are added.
    """
    if vocab.has_reciprocals:
        raise ValueError("merge attributes before adding reciprocal relations")
    stats = AttributeMergeStats()
    if not raw_attributes:
        return store, vocab, stats

    existing = set(map(tuple, store.split_triples("train")))
    rows = []
    relations_before = vocab.num_relations
    for ent, rel, attr_type in raw_attributes:
        ent_id = vocab.entity_index.get(ent)
        if ent_id is None:
            stats.dropped_unknown_entity += 1
            continue
        if attr_type not in vocab.entity_index:
            vocab.add_entity(attr_type)
            vocab.attribute_types.append(attr_type)
            stats.new_attribute_nodes += 1
        rel_id = vocab.add_relation(rel)
        enc = (ent_id, rel_id, vocab.entity_index[attr_type])
        if enc in existing:
            stats.dropped_duplicate += 1
            continue
        existing.add(enc)
        rows.append(enc)
    stats.retained = len(rows)
    stats.new_attribute_relations = vocab.num_relations - relations_before
    vocab.num_base_relations = vocab.num_relations

    new = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    triples = np.concatenate([store.triples, new])
    splits = np.concatenate([store.splits,
                             np.zeros(len(rows), dtype=np.uint8)])  # train
    flags = np.concatenate([store.attribute_flags, np.ones(len(rows), dtype=bool)])
    return TripleStore(triples, splits, flags), vocab, stats


# ---------------------------------------------------------------------------
# prepared-dataset bundle and serialization

@dataclass
class Dataset:
    """Everything the trainer and evaluator need, ready to use."""

    vocab: Vocabulary
    store: TripleStore
    filter_index: FilterIndex
    attribute_stats: AttributeMergeStats | None = None


def prepare_dataset(train_path, valid_path, test_path,
                    attributes_path=None) -> Dataset:
    """Full ingestion pipeline: parse, encode, merge attributes, reciprocals."""
    raw = {
        "train": parse_triples(train_path, "train"),
        "valid": parse_triples(valid_path, "valid"),
        "test": parse_triples(test_path, "test"),
    }
    vocab = build_vocab(raw)
    store = build_store(raw, vocab)
    stats = None
    if attributes_path is not None:
        raw_attr = parse_triples(attributes_path, "train")
        store, vocab, stats = merge_attributes(store, vocab, raw_attr)
    store, vocab = add_reciprocal(store, vocab)
    index = build_filter_index(store, vocab)
    return Dataset(vocab, store, index, stats)


def save_dataset(dataset: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = dataset.vocab
    meta = {
        "format": 1,
        "entities": vocab.entity_names,
        "relations": vocab.relation_names,
        "num_base_relations": vocab.num_base_relations,
        "has_reciprocals": vocab.has_reciprocals,
        "attribute_types": vocab.attribute_types,
    }
    (out / "vocab.json").write_text(json.dumps(meta), encoding="utf-8")
    np.savez(out / "triples.npz",
             triples=dataset.store.triples,
             splits=dataset.store.splits,
             attribute_flags=dataset.store.attribute_flags)
    fi = dataset.filter_index
    np.savez(out / "filter.npz",
             packed=fi._packed, offsets=fi._offsets, objects=fi._objects,
             num_relations=np.asarray([fi._num_relations]))
    stats_text, stats_csv = dataset_stats(dataset)
    (out / "stats.txt").write_text(stats_text, encoding="utf-8")
    (out / "stats.csv").write_text(stats_csv, encoding="utf-8")


def load_dataset(data_dir) -> Dataset:
    data_dir = Path(data_dir)
    try:
        meta = json.loads((data_dir / "vocab.json").read_text(encoding="utf-8"))
        arrays = np.load(data_dir / "triples.npz")
        filt = np.load(data_dir / "filter.npz")
    except OSError as exc:
        raise DataFormatError(f"cannot load prepared dataset: {exc}", data_dir) from exc
    vocab = Vocabulary(
        entity_names=list(meta["entities"]),
        relation_names=list(meta["relations"]),
        entity_index={n: i for i, n in enumerate(meta["entities"])},
        relation_index={n: i for i, n in enumerate(meta["relations"])},
        num_base_relations=int(meta["num_base_relations"]),
        has_reciprocals=bool(meta["has_reciprocals"]),
        attribute_types=list(meta["attribute_types"]),
    )
    store = TripleStore(arrays["triples"], arrays["splits"],
                        arrays["attribute_flags"])
    num_rel = int(filt["num_relations"][0])
    packed = filt["packed"]
    index = FilterIndex(packed // num_rel, packed % num_rel, filt["offsets"],
                        filt["objects"], num_rel)
    return Dataset(vocab, store, index)


def dataset_stats(dataset: Dataset) -> tuple[str, str]:
    """Human-readable and CSV dataset statistics (counts per split)."""
    vocab, store = dataset.vocab, dataset.store
    n_attr_nodes = len(vocab.attribute_types)
    base_entities = vocab.num_entities - n_attr_nodes
    attr_edges = int(np.count_nonzero(store.attribute_flags & store.split_mask("train")))
    if vocab.has_reciprocals:
        attr_edges //= 2  # each attribute edge also has its reciprocal
    rows = [
        ("entities", vocab.num_entities),
        ("entities_base", base_entities),
        ("attribute_nodes", n_attr_nodes),
        ("relation_types", vocab.num_base_relations),
        ("relation_types_with_reciprocals",
         vocab.num_relations if vocab.has_reciprocals else vocab.num_base_relations),
        ("attribute_triples", attr_edges),
    ]
    recip_div = 2 if vocab.has_reciprocals else 1
    for split in SPLITS:
        rows.append((f"{split}_edges", store.split_count(split) // recip_div))
    for split in SPLITS:
        rows.append((f"{split}_edges_directed", store.split_count(split)))
    if dataset.attribute_stats is not None:
        st = dataset.attribute_stats
        rows.append(("attribute_dropped_unknown_entity", st.dropped_unknown_entity))
        rows.append(("attribute_dropped_duplicate", st.dropped_duplicate))
    width = max(len(k) for k, _ in rows)
    text = "\n".join(f"{k:<{width}}  {v}" for k, v in rows) + "\n"
    csv = "key,value\n" + "\n".join(f"{k},{v}" for k, v in rows) + "\n"
    return text, csv
