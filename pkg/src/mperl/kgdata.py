"""Knowledge-graph ingestion: N-Triples parsing, dictionaries, labels and splits.

Terms are kept as strings. IRIs are stored without angle brackets, blank
nodes keep their ``_:`` prefix and literals are stored verbatim including
quotes and any datatype or language tag, so the three kinds never collide.
Literals become ordinary graph nodes.
"""

import csv
import gzip
import io
import json
import os
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, IngestionError, ParseError

SPLITS = ("train", "valid", "test")
HASTYPE = "hastype"

_IRI = r"<([^<>\"{}|^`\\\s]*)>"
_BNODE = r"(_:[A-Za-z0-9_][A-Za-z0-9_.\-]*)"
_LITERAL = r'("(?:[^"\\\n\r]|\\.)*"(?:@[A-Za-z]+(?:-[A-Za-z0-9]+)*|\^\^<[^<>\s]*>)?)'
_STATEMENT = re.compile(
    rf"^\s*(?:{_IRI}|{_BNODE})\s*{_IRI}\s*(?:{_IRI}|{_BNODE}|{_LITERAL})\s*\.\s*(?:#.*)?$"
)


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        path = str(source)
        raw = gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")
        return io.TextIOWrapper(raw, encoding="utf-8")
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8")


def parse_ntriples(source):
    """Parse N-Triples from a path (optionally ``.gz``), bytes or a binary stream.

    Returns a list of ``(subject, predicate, object)`` string triples.
    """
    triples = []
    with _open_text(source) as fh:
        for number, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            m = _STATEMENT.match(stripped)
            if m is None:
                raise ParseError(f"malformed N-Triples statement: {stripped[:80]!r}", number)
            s = m.group(1) if m.group(1) is not None else m.group(2)
            o = next(g for g in (m.group(4), m.group(5), m.group(6)) if g is not None)
            triples.append((s, m.group(3), o))
    return triples


def parse_tsv_triples(source):
    """Parse tab-separated ``head<TAB>relation<TAB>tail`` lines."""
    triples = []
    with _open_text(source) as fh:
        for number, line in enumerate(fh, start=1):
            line = line.rstrip("\n\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", number)
            triples.append(tuple(p.strip() for p in parts))
    return triples


def read_labels(source):
    """Read ``entity<TAB>class<TAB>split`` rows."""
    rows = []
    with _open_text(source) as fh:
        for number, line in enumerate(fh, start=1):
            line = line.rstrip("\n\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"label rows need 3 tab-separated fields, got {len(parts)}", number)
            entity, label, split = (p.strip() for p in parts)
            if split not in SPLITS:
                raise ParseError(f"unknown split tag {split!r}", number)
            rows.append((_strip_brackets(entity), label, split))
    return rows


def write_labels(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for entity, label, split in rows:
            fh.write(f"{entity}\t{label}\t{split}\n")


def read_benchmark_table(path, split, entity_column=None, label_column=None):
    """Read one of the public benchmark task tables (header row, tab separated).

    By default the first column is the entity and the first column whose
    name starts with ``label`` is the class.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader)
        e_idx = header.index(entity_column) if entity_column else 0
        if label_column:
            l_idx = header.index(label_column)
        else:
            candidates = [i for i, h in enumerate(header) if h.lower().startswith("label")]
            if not candidates:
                raise ParseError(f"{path}: no label column in header {header}")
            l_idx = candidates[0]
        return [(_strip_brackets(row[e_idx]), row[l_idx].strip(), split) for row in reader if row]


def _strip_brackets(term):
    term = term.strip()
    if term.startswith("<") and term.endswith(">"):
        return term[1:-1]
    return term


def is_literal(term):
    return term.startswith('"')


def local_name(iri):
    return re.split(r"[#/]", iri.rstrip("/#"))[-1]


def _matches_target(relation, targets):
    return relation in targets or local_name(relation) in targets


@dataclass
class DatasetSpec:
    name: str
    triples: list = field(default_factory=list)
    labels: str = ""
    target_relations: tuple = ()
    mode: str = "single"
    triples_format: str = "nt"
    augment_types: bool = False
    fanout: int = 0

    def __post_init__(self):
        if self.mode not in ("single", "multi"):
            raise ContractError(f"task mode must be 'single' or 'multi', got {self.mode!r}")


@dataclass
class KnowledgeGraph:
    """Dictionary-encoded graph with one row per labeled assertion.

    ``triples`` is an (m, 3) int64 array of (subject, relation, object)
    indices. ``label_entity``/``label_class``/``label_split`` hold one row
    per (entity, class) assertion; in single-label mode every labeled entity
    has exactly one row.
    """

    entities: list
    relations: list
    classes: list
    triples: np.ndarray
    label_entity: np.ndarray
    label_class: np.ndarray
    label_split: np.ndarray
    mode: str = "single"
    name: str = ""
    raw_triple_count: int = 0
    raw_relation_count: int = 0

    def __post_init__(self):
        self.entity_index = {e: i for i, e in enumerate(self.entities)}
        self.relation_index = {r: i for i, r in enumerate(self.relations)}
        self.class_index = {c: i for i, c in enumerate(self.classes)}

    @property
    def num_entities(self):
        return len(self.entities)

    @property
    def num_relations(self):
        return len(self.relations)

    @property
    def num_classes(self):
        return len(self.classes)

    def split_rows(self, split):
        return np.flatnonzero(self.label_split == SPLITS.index(split))

    def split_entities(self, split):
        """Sorted unique entity indices labeled in ``split``."""
        return np.unique(self.label_entity[self.split_rows(split)])

    def targets(self, entities, split=None):
        """Multi-hot (or one-hot) target matrix for ``entities``."""
        entities = np.asarray(entities)
        pos = {e: i for i, e in enumerate(entities.tolist())}
        y = np.zeros((len(entities), self.num_classes))
        rows = range(len(self.label_entity)) if split is None else self.split_rows(split)
        for r in rows:
            i = pos.get(int(self.label_entity[r]))
            if i is not None:
                y[i, self.label_class[r]] = 1.0
        return y

    def class_of(self, entities):
        """Single-label class index per entity."""
        lookup = dict(zip(self.label_entity.tolist(), self.label_class.tolist()))
        return np.array([lookup[int(e)] for e in entities], dtype=np.int64)

    def stats(self):
        return {
            "name": self.name,
            "entities": self.num_entities,
            "relations": self.raw_relation_count,
            "relations_kept": self.num_relations,
            "triples": self.raw_triple_count,
            "triples_kept": int(len(self.triples)),
            "labelled": int(len(self.label_entity)) if self.mode == "multi"
            else int(len(np.unique(self.label_entity))),
            "classes": self.num_classes,
        }

    def equals(self, other):
        return (
            self.entities == other.entities
            and self.relations == other.relations
            and self.classes == other.classes
            and self.mode == other.mode
            and self.name == other.name
            and self.raw_triple_count == other.raw_triple_count
            and self.raw_relation_count == other.raw_relation_count
            and np.array_equal(self.triples, other.triples)
            and np.array_equal(self.label_entity, other.label_entity)
            and np.array_equal(self.label_class, other.label_class)
            and np.array_equal(self.label_split, other.label_split)
        )


def build_graph(triples, labels, spec):
    """Encode term triples and label rows into a :class:`KnowledgeGraph`.

    Triples whose relation is a target relation (matched by full IRI or by
    local name) are removed. Their endpoints stay in the entity dictionary.
    """
    targets = set(spec.target_relations)
    entity_set = set()
    relation_set = set()
    kept = []
    for s, p, o in triples:
        entity_set.add(s)
        entity_set.add(o)
        relation_set.add(p)
        if not _matches_target(p, targets):
            kept.append((s, p, o))
    entities = sorted(entity_set)
    relations = sorted({p for _, p, _ in kept})
    e_idx = {e: i for i, e in enumerate(entities)}
    r_idx = {r: i for i, r in enumerate(relations)}
    encoded = np.array([(e_idx[s], r_idx[p], e_idx[o]) for s, p, o in kept], dtype=np.int64).reshape(-1, 3)

    classes = sorted({c for _, c, _ in labels})
    if len(classes) < 2:
        raise IngestionError(f"need at least 2 classes, found {len(classes)}")
    c_idx = {c: i for i, c in enumerate(classes)}
    le, lc, ls = [], [], []
    seen = {}
    for entity, cls, split in labels:
        if entity not in e_idx:
            raise IngestionError(f"labeled entity not in graph: {entity}")
        key = (entity, cls) if spec.mode == "multi" else entity
        if key in seen:
            if seen[key] != split:
                raise IngestionError(f"{key} appears in splits {seen[key]} and {split}")
            if spec.mode == "single":
                raise IngestionError(f"single-label mode: {entity} has more than one label row")
            continue
        seen[key] = split
        le.append(e_idx[entity])
        lc.append(c_idx[cls])
        ls.append(SPLITS.index(split))
    return KnowledgeGraph(
        entities=entities, relations=relations, classes=classes, triples=encoded,
        label_entity=np.array(le, dtype=np.int64), label_class=np.array(lc, dtype=np.int64),
        label_split=np.array(ls, dtype=np.int64), mode=spec.mode, name=spec.name,
        raw_triple_count=len(triples), raw_relation_count=len(relation_set),
    )


def augment_type_triples(kg):
    """Add ``(e, hastype, class)`` triples for every training-split assertion.

    Classes are registered as entities (reusing an existing node when the
    class string already names one) and ``hastype`` receives a fresh
    relation index. Validation and test assertions are never added.
    """
    if kg.mode != "multi":
        raise ContractError("type augmentation is only defined for multi-label graphs")
    train = kg.split_rows("train")
    if len(train) == 0:
        return kg
    entities = list(kg.entities)
    e_idx = dict(kg.entity_index)
    for cls in kg.classes:
        if cls not in e_idx:
            e_idx[cls] = len(entities)
            entities.append(cls)
    relations = list(kg.relations)
    name = HASTYPE
    while name in kg.relation_index:
        name = "_" + name
    relations.append(name)
    rel = len(relations) - 1
    class_node = np.array([e_idx[c] for c in kg.classes], dtype=np.int64)
    extra = np.stack([kg.label_entity[train], np.full(len(train), rel), class_node[kg.label_class[train]]], axis=1)
    return KnowledgeGraph(
        entities=entities, relations=relations, classes=list(kg.classes),
        triples=np.concatenate([kg.triples, extra.astype(np.int64)]),
        label_entity=kg.label_entity.copy(), label_class=kg.label_class.copy(),
        label_split=kg.label_split.copy(), mode=kg.mode, name=kg.name,
        raw_triple_count=kg.raw_triple_count, raw_relation_count=kg.raw_relation_count,
    )


def sample_neighbors(adjacency, entity, fanout, seed):
    """Uniformly sample at most ``fanout`` neighbors of ``entity`` per relation.

    Returns ``{relation: sorted neighbor array}``. Relations where the entity
    has ``fanout`` or fewer neighbors keep all of them.
    """
    if fanout < 1:
        raise ContractError("fanout must be >= 1")
    rng = np.random.default_rng([int(seed), int(entity)])
    out = {}
    for r, nbrs in sorted(adjacency.neighbors(entity).items()):
        if len(nbrs) > fanout:
            nbrs = np.sort(rng.choice(nbrs, size=fanout, replace=False))
        out[r] = nbrs
    return out


def degree_histogram(kg):
    """``[(degree, count), ...]`` over all entities, ascending by degree."""
    deg = np.zeros(kg.num_entities, dtype=np.int64)
    if len(kg.triples):
        np.add.at(deg, kg.triples[:, 0], 1)
        np.add.at(deg, kg.triples[:, 2], 1)
    counts = Counter(deg.tolist())
    return sorted(counts.items())


# -- cache ----------------------------------------------------------------------
def save_graph(kg, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(directory / "graph.npz", triples=kg.triples, label_entity=kg.label_entity,
                        label_class=kg.label_class, label_split=kg.label_split)
    meta = {
        "format": 1, "name": kg.name, "mode": kg.mode, "raw_triple_count": kg.raw_triple_count,
        "raw_relation_count": kg.raw_relation_count, "entities": kg.entities,
        "relations": kg.relations, "classes": kg.classes,
    }
    with open(directory / "dictionaries.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, ensure_ascii=False)
    return directory


def load_graph(directory):
    directory = Path(directory)
    with open(directory / "dictionaries.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    arrays = np.load(directory / "graph.npz")
    return KnowledgeGraph(
        entities=meta["entities"], relations=meta["relations"], classes=meta["classes"],
        triples=arrays["triples"], label_entity=arrays["label_entity"],
        label_class=arrays["label_class"], label_split=arrays["label_split"], mode=meta["mode"],
        name=meta["name"], raw_triple_count=meta["raw_triple_count"],
        raw_relation_count=meta["raw_relation_count"],
    )


def load_dataset(spec):
    """Parse the files named by ``spec`` and build the graph."""
    parse = parse_ntriples if spec.triples_format == "nt" else parse_tsv_triples
    triples = []
    for path in spec.triples:
        triples.extend(parse(path))
    kg = build_graph(triples, read_labels(spec.labels), spec)
    if spec.augment_types:
        kg = augment_type_triples(kg)
    return kg


def spec_to_dict(spec):
    return asdict(spec)
