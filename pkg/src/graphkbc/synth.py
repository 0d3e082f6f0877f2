"""Synthetic dataset generators for verification and smoke runs.

The toy generator writes small random KGs (optionally with all splits equal,
for overfitting checks). The clustered generator builds a graph where group
membership is only visible through hub edges, so encoder layers have signal
to propagate. The benchmark-shaped writer emits files with the exact entity,
relation, and triple counts of the public FB15k-237(-Attr) benchmark so the
ingestion arithmetic can be verified without redistributing the data.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _write_tsv(path: Path, triples) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for h, r, t in triples:
            fh.write(f"{h}\t{r}\t{t}\n")


def random_toy_triples(rng: np.random.Generator, n_entities: int = 20,
                       n_relations: int = 3, n_triples: int = 60,
                       ) -> list[tuple[str, str, str]]:
    """Unique random triples; every entity and relation appears at least once."""
    ents = [f"e{i}" for i in range(n_entities)]
    rels = [f"r{i}" for i in range(n_relations)]
    seen: set[tuple[int, int, int]] = set()
    triples: list[tuple[str, str, str]] = []
    for i in range(n_entities):
        trip = (i, i % n_relations, (i + 1) % n_entities)
        if trip not in seen:
            seen.add(trip)
            triples.append((ents[trip[0]], rels[trip[1]], ents[trip[2]]))
    while len(triples) < n_triples:
        s = int(rng.integers(n_entities))
        o = int(rng.integers(n_entities))
        if s == o:
            continue
        r = int(rng.integers(n_relations))
        if (s, r, o) in seen:
            continue
        seen.add((s, r, o))
        triples.append((ents[s], rels[r], ents[o]))
    return triples


def write_toy_dataset(out_dir, seed: int = 0, n_entities: int = 20,
                      n_relations: int = 3, n_triples: int = 60,
                      shared_splits: bool = True) -> None:
    """Toy KG on disk; shared_splits=True writes train=valid=test."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    triples = random_toy_triples(rng, n_entities, n_relations, n_triples)
    if shared_splits:
        for split in ("train", "valid", "test"):
            _write_tsv(out / f"{split}.txt", triples)
        return
    perm = rng.permutation(len(triples))
    n_eval = max(1, len(triples) // 10)
    valid = [triples[i] for i in perm[:n_eval]]
    test = [triples[i] for i in perm[n_eval:2 * n_eval]]
    train = [triples[i] for i in perm[2 * n_eval:]]
    _write_tsv(out / "train.txt", train)
    _write_tsv(out / "valid.txt", valid)
    _write_tsv(out / "test.txt", test)


def write_clustered_dataset(out_dir, seed: int = 0, n_groups: int = 6,
                            group_size: int = 10, train_frac: float = 0.3) -> None:
    """Groups of entities tied to a hub; peer edges split across train/valid/test.

    Every member keeps its hub edge in train, but only a fraction of its peer
    edges; ranking held-out peers rewards models that can reach group
    membership through the hub, i.e. encoders with at least one layer.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    train: list[tuple[str, str, str]] = []
    peer_pool: list[tuple[str, str, str]] = []
    for g in range(n_groups):
        hub = f"hub{g}"
        members = [f"m{g}_{i}" for i in range(group_size)]
        for m in members:
            train.append((m, "in_group", hub))
        for i, a in enumerate(members):
            for b in members[i + 1:]:
                peer_pool.append((a, "peer", b))
    perm = rng.permutation(len(peer_pool))
    n_train = int(round(train_frac * len(peer_pool)))
    n_rest = len(peer_pool) - n_train
    n_valid = n_rest // 2
    train += [peer_pool[i] for i in perm[:n_train]]
    valid = [peer_pool[i] for i in perm[n_train:n_train + n_valid]]
    test = [peer_pool[i] for i in perm[n_train + n_valid:]]
    _write_tsv(out / "train.txt", train)
    _write_tsv(out / "valid.txt", valid)
    _write_tsv(out / "test.txt", test)


def _unique_random_triples(rng: np.random.Generator, seen: set[int],
                           n_wanted: int, n_entities: int, n_relations: int,
                           ent_fmt: str, rel_fmt: str,
                           entity_pool=None) -> list[tuple[str, str, str]]:
    """Draw unique (s, r, o) triples, packed-int dedup against `seen`."""
    out: list[tuple[str, str, str]] = []
    pool = entity_pool
    while len(out) < n_wanted:
        k = (n_wanted - len(out)) * 2 + 16
        if pool is None:
            ss = rng.integers(0, n_entities, k)
            oo = rng.integers(0, n_entities, k)
        else:
            ss = pool[rng.integers(0, len(pool), k)]
            oo = pool[rng.integers(0, len(pool), k)]
        rr = rng.integers(0, n_relations, k)
        for s, r, o in zip(ss, rr, oo):
            if s == o:
                continue
            key = (int(s) * n_relations + int(r)) * n_entities + int(o)
            if key in seen:
                continue
            seen.add(key)
            out.append((ent_fmt % s, rel_fmt % r, ent_fmt % o))
            if len(out) == n_wanted:
                break
    return out


def write_benchmark_shaped_dataset(out_dir, seed: int = 0,
                                   n_entities: int = 14541,
                                   n_relations: int = 237,
                                   n_train: int = 272115,
                                   n_valid: int = 17535,
                                   n_test: int = 20466,
                                   n_attr_triples: int = 78334,
                                   n_attr_types: int = 203,
                                   n_attr_relations: int = 247,
                                   n_attr_entities: int = 7589) -> None:
    """Random dataset matching the public benchmark's published counts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ent_fmt, rel_fmt = "e%05d", "r%03d"

    seen: set[int] = set()
    train: list[tuple[str, str, str]] = []
    # coverage pass: every entity and relation appears in train
    for i in range(n_entities):
        s, r, o = i, i % n_relations, (i + 1) % n_entities
        seen.add((s * n_relations + r) * n_entities + o)
        train.append((ent_fmt % s, rel_fmt % r, ent_fmt % o))
    train += _unique_random_triples(rng, seen, n_train - len(train),
                                    n_entities, n_relations, ent_fmt, rel_fmt)
    valid = _unique_random_triples(rng, seen, n_valid, n_entities, n_relations,
                                   ent_fmt, rel_fmt)
    test = _unique_random_triples(rng, seen, n_test, n_entities, n_relations,
                                  ent_fmt, rel_fmt)
    _write_tsv(out / "train.txt", train)
    _write_tsv(out / "valid.txt", valid)
    _write_tsv(out / "test.txt", test)

    attr_entities = rng.choice(n_entities, size=n_attr_entities, replace=False)
    attrs: list[tuple[str, str, str]] = []
    seen_attr: set[tuple[int, int, int]] = set()
    # coverage pass: all attribute relations and types appear
    for i in range(n_attr_relations):
        e = int(attr_entities[i % n_attr_entities])
        key = (e, i, i % n_attr_types)
        seen_attr.add(key)
        attrs.append((ent_fmt % e, "a%03d" % i, "t%03d" % (i % n_attr_types)))
    while len(attrs) < n_attr_triples:
        e = int(attr_entities[rng.integers(n_attr_entities)])
        a = int(rng.integers(n_attr_relations))
        t = int(rng.integers(n_attr_types))
        if (e, a, t) in seen_attr:
            continue
        seen_attr.add((e, a, t))
        attrs.append((ent_fmt % e, "a%03d" % a, "t%03d" % t))
    _write_tsv(out / "attributes.txt", attrs)
