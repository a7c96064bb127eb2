"""Small graph fixtures shared by several test modules."""

import numpy as np

from mperl.kgdata import DatasetSpec, build_graph, write_labels

EX = "http://example.org/"


def toy_triples():
    t = []
    for i in range(6):
        t.append((f"{EX}p{i}", f"{EX}worksAt", f"{EX}group{i % 2}"))
        t.append((f"{EX}p{i}", f"{EX}name", f'"person {i}"'))
    t.append((f"{EX}group0", f"{EX}partOf", f"{EX}inst"))
    t.append((f"{EX}group1", f"{EX}partOf", f"{EX}inst"))
    t.append((f"{EX}inst", f"{EX}employs", f"{EX}p0"))
    return t


def toy_labels():
    rows = []
    for i in range(6):
        rows.append((f"{EX}p{i}", f"class{i % 2}", "test" if i >= 4 else "train"))
    return rows


def toy_graph():
    spec = DatasetSpec(name="toy", target_relations=(f"{EX}employs",))
    return build_graph(toy_triples(), toy_labels(), spec)


def separable_data(n_per_class=12, n_classes=2, seed=0, noise_edges=0):
    """Each class shares a private hub; labeled entities link to their class hub."""
    rng = np.random.default_rng(seed)
    triples, labels = [], []
    for c in range(n_classes):
        for i in range(n_per_class):
            e = f"{EX}c{c}_e{i}"
            triples.append((e, f"{EX}memberOf", f"{EX}hub{c}"))
            triples.append((e, f"{EX}label", f'"{c}-{i}"'))
            split = "test" if i % 4 == 3 else "train"
            labels.append((e, f"class{c}", split))
    ents = [t[0] for t in triples]
    for _ in range(noise_edges):
        a, b = rng.choice(len(ents), 2, replace=False)
        triples.append((ents[a], f"{EX}knows", ents[b]))
    return triples, labels


def separable_graph(n_per_class=12, n_classes=2, seed=0, noise_edges=0):
    triples, labels = separable_data(n_per_class, n_classes, seed, noise_edges)
    return build_graph(triples, labels, DatasetSpec(name="separable", target_relations=()))


def _term(t):
    return t if t.startswith('"') else f"<{t}>"


def write_ntriples(triples, path):
    with open(path, "w", encoding="utf-8") as fh:
        for s, p, o in triples:
            fh.write(f"{_term(s)} {_term(p)} {_term(o)} .\n")
    return path


def write_separable_files(directory, **kw):
    """Write the separable toy as triples.nt + labels.tsv; returns both paths."""
    triples, labels = separable_data(**kw)
    nt = write_ntriples(triples, directory / "triples.nt")
    write_labels(labels, directory / "labels.tsv")
    return nt, directory / "labels.tsv"


def typed_graph_data(n_entities=24, n_types=6, seed=0):
    """Multi-label toy: entities linked to type-indicative hubs, 1-3 types each."""
    rng = np.random.default_rng(seed)
    triples, labels = [], []
    for i in range(n_entities):
        e = f"{EX}m{i}"
        types = sorted(set(rng.choice(n_types, size=rng.integers(1, 4), replace=True).tolist()))
        for t in types:
            triples.append((e, f"{EX}near", f"{EX}hub{t}"))
        split = ("train", "train", "valid", "test")[i % 4]
        for t in types:
            labels.append((e, f"type{t}", split))
        triples.append((e, f"{EX}next", f"{EX}m{(i + 1) % n_entities}"))
    return triples, labels
