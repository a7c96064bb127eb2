"""Benchmark registry and the on-disk dataset layout.

A prepared dataset lives in ``<root>/<name>/``:

    manifest.json   source triple files (with sha256), task mode, target relations
    labels.tsv      entity<TAB>class<TAB>split rows
    cache/          binary graph written by :func:`kgdata.save_graph`

``prepare`` builds this layout from a directory holding the unpacked public
files. The root defaults to ``$MPERL_DATA`` and then ``./data``.
"""

import glob
import hashlib
import json
import os
from pathlib import Path

from .errors import ConfigError, IngestionError
from .kgdata import (
    DatasetSpec, load_dataset, load_graph, read_benchmark_table, save_graph, write_labels,
)

DATA_ENV = "MPERL_DATA"

SWRC = "http://swrc.ontoware.org/ontology#"

REGISTRY = {
    "aifb": {
        "target_relations": (SWRC + "employs", SWRC + "affiliation"),
        "mode": "single",
        "triples_format": "nt",
        "triple_files": ("aifbfixed_complete.n3", "*.nt", "*.nt.gz"),
        "label_files": {"train": "trainingSet.tsv", "test": "testSet.tsv"},
        "expected": {"entities": 8285, "relations": 45, "triples": 29043, "labelled": 176, "classes": 4},
    },
    "mutag": {
        "target_relations": ("http://dl-learner.org/carcinogenesis#isMutagenic",),
        "mode": "single",
        "triples_format": "nt",
        "triple_files": ("*.nt", "*.nt.gz"),
        "label_files": {"train": "trainingSet.tsv", "test": "testSet.tsv"},
        "expected": {"entities": 23644, "relations": 23, "triples": 74227, "labelled": 340, "classes": 2},
    },
    "bgs": {
        "target_relations": ("http://data.bgs.ac.uk/ref/Lexicon/hasLithogenesis",),
        "mode": "single",
        "triples_format": "nt",
        "triple_files": ("*.nt", "*.nt.gz"),
        "label_files": {"train": "trainingSet.tsv", "test": "testSet.tsv"},
        "expected": {"entities": 333845, "relations": 103, "triples": 916199, "labelled": 146, "classes": 2},
    },
    "am": {
        "target_relations": ("http://purl.org/collections/nl/am/material",
                             "http://purl.org/collections/nl/am/objectCategory"),
        "mode": "single",
        "triples_format": "nt",
        "triple_files": ("*.nt", "*.nt.gz"),
        "label_files": {"train": "trainingSet.tsv", "test": "testSet.tsv"},
        "expected": {"entities": 1666764, "relations": 133, "triples": 5988321, "labelled": 1000,
                     "classes": 11},
    },
    "fb15ket": {
        "target_relations": (),
        "mode": "multi",
        "triples_format": "tsv",
        "triple_files": ("*mtr100*train*.txt", "kg*.tsv", "kg*.txt"),
        "label_files": {"train": "*Type*train*.txt", "valid": "*Type*valid*.txt", "test": "*Type*test*.txt"},
        "augment_types": True,
        "fanout": 10,
        "max_steps": 2,
        "batch_size": 16,
        "expected": {"entities": 14951, "relations": 1345, "triples": 483142, "labelled": 168313,
                     "classes": 3584},
    },
    "yago43ket": {
        "target_relations": (),
        "mode": "multi",
        "triples_format": "tsv",
        "triple_files": ("*YAGO43k*train*.txt", "kg*.tsv", "kg*.txt"),
        "label_files": {"train": "*Type*train*.txt", "valid": "*Type*valid*.txt", "test": "*Type*test*.txt"},
        "augment_types": True,
        "fanout": 10,
        "max_steps": 2,
        "batch_size": 16,
        "expected": {"entities": 42335, "relations": 37, "triples": 331686, "labelled": 462083,
                     "classes": 45182},
    },
}


def data_root(root=None):
    if root:
        return Path(root)
    return Path(os.environ.get(DATA_ENV) or "data")


def registry_entry(name):
    try:
        return REGISTRY[name]
    except KeyError:
        raise ConfigError([f"dataset: unknown dataset {name!r} (known: {', '.join(sorted(REGISTRY))})"])


def sha256(path, chunk=1 << 20):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(chunk), b""):
            h.update(block)
    return h.hexdigest()


def _find(source, patterns):
    for pattern in patterns:
        hits = sorted(glob.glob(str(Path(source) / pattern)))
        if hits:
            return hits
    return []


def _read_type_pairs(path, split):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n\r").split("\t")
            if len(parts) >= 2 and parts[0].strip():
                rows.append((parts[0].strip(), parts[1].strip(), split))
    return rows


def prepare(name, source, root=None):
    """Convert the unpacked benchmark files in ``source`` into the dataset layout.

    Returns the path of the dataset directory.
    """
    entry = registry_entry(name)
    source = Path(source)
    if not source.is_dir():
        raise IngestionError(f"source directory not found: {source}")
    triple_files = _find(source, entry["triple_files"])
    if not triple_files:
        raise IngestionError(f"no triple files matching {entry['triple_files']} under {source}")
    labels = []
    for split, pattern in entry["label_files"].items():
        hits = _find(source, (pattern,))
        if not hits:
            raise IngestionError(f"no {split} label file matching {pattern!r} under {source}")
        if entry["mode"] == "single":
            labels.extend(read_benchmark_table(hits[0], split))
        else:
            labels.extend(_read_type_pairs(hits[0], split))

    out = data_root(root) / name
    out.mkdir(parents=True, exist_ok=True)
    write_labels(labels, out / "labels.tsv")
    manifest = {
        "name": name,
        "mode": entry["mode"],
        "triples_format": entry["triples_format"],
        "target_relations": list(entry["target_relations"]),
        "augment_types": bool(entry.get("augment_types", False)),
        "fanout": int(entry.get("fanout", 0)),
        "triples": [{"path": str(Path(p).resolve()), "sha256": sha256(p)} for p in triple_files],
        "labels_sha256": sha256(out / "labels.tsv"),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    kg = load_dataset(spec_from_manifest(out))
    save_graph(kg, out / "cache")
    return out


def spec_from_manifest(directory):
    directory = Path(directory)
    m = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    return DatasetSpec(
        name=m["name"], triples=[t["path"] for t in m["triples"]], labels=str(directory / "labels.tsv"),
        target_relations=tuple(m["target_relations"]), mode=m["mode"], triples_format=m["triples_format"],
        augment_types=m["augment_types"], fanout=m["fanout"],
    )


def load_prepared(name, root=None):
    """Load a prepared dataset, from its cache when present."""
    directory = data_root(root) / name
    if (directory / "cache" / "graph.npz").exists():
        return load_graph(directory / "cache")
    if not (directory / "manifest.json").exists():
        raise IngestionError(
            f"dataset {name!r} is not prepared under {directory}; "
            f"run `mperl prepare --dataset {name} --source <dir>` or set {DATA_ENV}"
        )
    kg = load_dataset(spec_from_manifest(directory))
    save_graph(kg, directory / "cache")
    return kg


def is_prepared(name, root=None):
    directory = data_root(root) / name
    return (directory / "cache" / "graph.npz").exists() or (directory / "manifest.json").exists()
