"""Training loop, evaluation metrics and the study harnesses.

Output files are deterministic for a fixed configuration: JSON is written
with sorted keys and no timestamps, floats use ``repr``.
"""

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .config import CUSTOM, dataset_defaults
from .datasets import load_prepared
from .errors import ContractError, TrainingError
from .evloss import LossConfig, total_loss
from .kgdata import DatasetSpec, load_dataset
from .model import HyperParams, forward, init_params, predict, save_checkpoint
from .rgraph import build_adjacency

LOSS_COLUMNS = ("epoch", "total", "err", "var", "unc", "reg", "delta_t")
HITS = (1, 3, 10)


# -- metrics --------------------------------------------------------------------
def accuracy(y_true, y_pred):
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if len(y_true) == 0:
        raise ContractError("accuracy of an empty split")
    return float(np.mean(y_true == y_pred))


def f1_macro(y_true, y_pred):
    """Unweighted mean of per-class F1 over classes seen in truth or prediction."""
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if len(y_true) == 0:
        raise ContractError("F1 of an empty split")
    scores = []
    for c in np.union1d(y_true, y_pred):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        scores.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return float(np.mean(scores))


def rank_of(scores, target, exclude=()):
    """1-based rank of ``target``; ties go to the lower class index, ``exclude`` is skipped."""
    scores = np.asarray(scores)
    s = scores[target]
    ahead = (scores > s) | ((scores == s) & (np.arange(len(scores)) < target))
    ahead[target] = False
    if len(exclude):
        ahead[np.asarray(list(exclude), dtype=np.int64)] = False
    return int(ahead.sum()) + 1


def filtered_ranks(scores, queries, known):
    """Filtered and raw ranks for ``queries`` = [(row, class), ...].

    ``known[row]`` is the set of all known classes of that entity; the other
    known classes are removed before ranking the queried one.
    """
    filt, raw = [], []
    for row, cls in queries:
        others = [c for c in known[row] if c != cls]
        filt.append(rank_of(scores[row], cls, others))
        raw.append(rank_of(scores[row], cls))
    return np.array(filt, dtype=np.int64), np.array(raw, dtype=np.int64)


def ranking_metrics(ranks):
    ranks = np.asarray(ranks, dtype=np.float64)
    if len(ranks) == 0:
        raise ContractError("ranking metrics of an empty query set")
    out = {"mrr": float(np.mean(1.0 / ranks))}
    for k in HITS:
        out[f"hit@{k}"] = float(np.mean(ranks <= k))
    return out


@dataclass
class MetricsReport:
    runs: list = field(default_factory=list)

    def add(self, metrics):
        self.runs.append(dict(metrics))

    @property
    def keys(self):
        return sorted({k for r in self.runs for k, v in r.items() if isinstance(v, (int, float))
                       and not isinstance(v, bool) and k != "seed"})

    def mean(self):
        return {k: float(np.mean([r[k] for r in self.runs])) for k in self.keys}

    def std(self):
        # population standard deviation over repeats
        return {k: float(np.std([r[k] for r in self.runs])) for k in self.keys}

    def to_dict(self):
        return {"runs": self.runs, "mean": self.mean(), "std": self.std(), "repeats": len(self.runs)}


# -- data and model setup ---------------------------------------------------------
def load_graph_for(cfg):
    if cfg.dataset == CUSTOM:
        spec = DatasetSpec(name=CUSTOM, triples=list(cfg.triples), labels=cfg.labels,
                           target_relations=tuple(cfg.target_relations), mode=cfg.mode,
                           triples_format=cfg.triples_format)
        return load_dataset(spec)
    return load_prepared(cfg.dataset, cfg.data_root or None)


def hyperparams_for(cfg, kg, num_relations):
    return HyperParams(
        num_classes=kg.num_classes, hidden=(cfg.hidden,) * (cfg.layers - 1), out_dim=0,
        num_bases=min(cfg.num_bases, num_relations), max_steps=cfg.max_steps, lambda_p=cfg.lambda_p,
        beta=cfg.beta, mode=kg.mode, head="softmax" if cfg.loss == "cross_entropy" else "evidential",
    )


def loss_config_for(cfg):
    return LossConfig(beta=cfg.beta, lambda_p=cfg.lambda_p, horizon=cfg.horizon, kind=cfg.loss,
                      reg_form=cfg.reg_form)


def _adjacency_for(params, kg):
    # parameters built with inverse relations have twice the base relation count
    return build_adjacency(kg, include_inverse=params.layers[0].coef.shape[0] == 2 * kg.num_relations)


# -- evaluation --------------------------------------------------------------------
def evaluate_classification(params, hp, kg, split, adj=None):
    """(accuracy, F1-macro) of argmax predictions on a single-label split."""
    if kg.mode != "single":
        raise ContractError("classification metrics need a single-label dataset")
    ents = kg.split_entities(split)
    if len(ents) == 0:
        raise ContractError(f"split {split!r} has no labeled entities")
    adj = _adjacency_for(params, kg) if adj is None else adj
    pred = predict(params, adj, hp, rows=ents).argmax(axis=1)
    truth = kg.class_of(ents)
    return accuracy(truth, pred), f1_macro(truth, pred)


def evaluate_ranking(params, hp, kg, split, adj=None):
    """Filtered MRR and Hit@k over the type assertions of ``split`` (plus raw MRR)."""
    if kg.mode != "multi":
        raise ContractError("ranking metrics need a multi-label dataset")
    rows = kg.split_rows(split)
    if len(rows) == 0:
        raise ContractError(f"split {split!r} has no type assertions")
    adj = _adjacency_for(params, kg) if adj is None else adj
    ents = np.unique(kg.label_entity[rows])
    scores = predict(params, adj, hp, rows=ents)
    pos = {e: i for i, e in enumerate(ents.tolist())}
    known = {}
    for e, c in zip(kg.label_entity.tolist(), kg.label_class.tolist()):
        if e in pos:
            known.setdefault(pos[e], set()).add(c)
    queries = [(pos[int(kg.label_entity[r])], int(kg.label_class[r])) for r in rows]
    filt, raw = filtered_ranks(scores, queries, known)
    out = ranking_metrics(filt)
    out["mrr_raw"] = ranking_metrics(raw)["mrr"]
    return out


def evaluate(params, hp, kg, adj=None):
    adj = _adjacency_for(params, kg) if adj is None else adj
    if kg.mode == "multi":
        return evaluate_ranking(params, hp, kg, "test", adj)
    acc, f1 = evaluate_classification(params, hp, kg, "test", adj)
    train_acc, _ = evaluate_classification(params, hp, kg, "train", adj)
    return {"accuracy": acc, "f1_macro": f1, "train_accuracy": train_acc}


# -- training ------------------------------------------------------------------------
@dataclass
class TrainResult:
    params: object
    hp: HyperParams
    curve: list
    metrics: dict


def _objective(params, adj, hp, lcfg, kg, ents, epoch, cfg, nodes=None, rows=None):
    rows = ents if rows is None else rows
    outputs, trace = forward(params, adj, hp, rows=rows, nodes=nodes)
    breakdown = total_loss(outputs, trace, kg.targets(ents, "train"), lcfg, epoch, rows=rows)
    objective = breakdown.total
    if cfg.l2:
        for t in params.first_layer_tensors():
            objective = objective + dc.sum_(t * t) * cfg.l2
    return breakdown, objective


def _step(opt, params, objective):
    grads = dc.backward(objective)
    # tensors outside the graph (e.g. the halting vector when N = 1) get zero updates
    opt.step([grads.get(p, np.zeros_like(p.data)) for p in opt.params])


def _check_finite(breakdown, epoch, run_dir):
    row = breakdown.as_row()
    if all(math.isfinite(v) for v in row.values()):
        return
    dump = {"epoch": epoch, **{k: repr(v) for k, v in row.items()}}
    if run_dir is not None:
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        (Path(run_dir) / "nonfinite_loss.json").write_text(json.dumps(dump, indent=2, sort_keys=True) + "\n")
    raise TrainingError(f"non-finite loss at epoch {epoch}: {dump}", breakdown=row)


def _snapshot(params):
    return [t.data.copy() for t in params.tensors()]


def _restore(params, snap):
    for t, data in zip(params.tensors(), snap):
        t.data[...] = data


def train(cfg, kg=None, run_dir=None, seed=None):
    """Train one model. Writes loss.csv, checkpoint.npz and metrics.json into ``run_dir``.

    Epochs are numbered from 1, so the annealing weight of the first epoch
    is 1/horizon.
    """
    cfg = dataset_defaults(cfg)
    kg = load_graph_for(cfg) if kg is None else kg
    seed = cfg.seed if seed is None else seed
    adj = build_adjacency(kg, include_inverse=cfg.include_inverse)
    hp = hyperparams_for(cfg, kg, adj.num_relations)
    lcfg = loss_config_for(cfg)
    params = init_params(hp, kg.num_entities, adj.num_relations, seed)
    opt = dc.Adam(params.tensors(), lr=cfg.lr)
    train_ents = kg.split_entities("train")
    if len(train_ents) == 0:
        raise ContractError("no training entities")

    curve = []
    if not cfg.large_mode:
        for epoch in range(1, cfg.epochs + 1):
            breakdown, objective = _objective(params, adj, hp, lcfg, kg, train_ents, epoch, cfg)
            _check_finite(breakdown, epoch, run_dir)
            _step(opt, params, objective)
            curve.append({"epoch": epoch, **breakdown.as_row()})
    else:
        curve = _train_batched(cfg, kg, adj, hp, lcfg, params, opt, train_ents, seed, run_dir)

    metrics = {"seed": seed, **evaluate(params, hp, kg, adj)}
    metrics["final_loss"] = curve[-1]["total"]
    metrics["epochs_run"] = len(curve)
    result = TrainResult(params=params, hp=hp, curve=curve, metrics=metrics)
    if run_dir is not None:
        write_run(result, run_dir, cfg)
    return result


def _train_batched(cfg, kg, adj, hp, lcfg, params, opt, train_ents, seed, run_dir):
    """Mini-batch training on sampled neighborhoods with validation early stopping."""
    hops = hp.max_steps * hp.num_layers
    batch = cfg.batch_size or len(train_ents)
    has_valid = kg.mode == "multi" and len(kg.split_rows("valid")) > 0
    best, best_snap, stale = -1.0, None, 0
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng([seed, epoch])
        graph = adj.sampled(cfg.fanout, rng) if cfg.fanout else adj
        order = rng.permutation(train_ents)
        rows = []
        for b, start in enumerate(range(0, len(order), batch)):
            if cfg.max_batches and b >= cfg.max_batches:
                break
            ents = np.sort(order[start:start + batch])
            nodes = graph.receptive_field(ents, hops)
            sub = graph.subgraph(nodes)
            local = np.searchsorted(nodes, ents)
            breakdown, objective = _objective(params, sub, hp, lcfg, kg, ents, epoch, cfg,
                                              nodes=nodes, rows=local)
            _check_finite(breakdown, epoch, run_dir)
            _step(opt, params, objective)
            rows.append(breakdown.as_row())
        curve.append({"epoch": epoch, **{k: float(np.mean([r[k] for r in rows])) for k in LOSS_COLUMNS[1:]}})
        if has_valid:
            mrr = evaluate_ranking(params, hp, kg, "valid", adj)["mrr"]
            if mrr > best:
                best, best_snap, stale = mrr, _snapshot(params), 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    if best_snap is not None:
        _restore(params, best_snap)
    return curve


# -- outputs ---------------------------------------------------------------------------
def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_curve(path, curve, columns=LOSS_COLUMNS):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in curve:
            w.writerow([row[c] if isinstance(row[c], int) else repr(float(row[c])) for c in columns])


def read_curve(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_run(result, run_dir, cfg):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_curve(run_dir / "loss.csv", result.curve)
    save_checkpoint(run_dir / "checkpoint.npz", result.params, result.hp,
                    {"seed": result.metrics["seed"], "dataset": cfg.dataset})
    write_json(run_dir / "metrics.json", result.metrics)


# -- repeats and studies --------------------------------------------------------------------
def _run_one(args):
    cfg, kg, seed, run_dir = args
    res = train(cfg, kg, run_dir, seed)
    return res.metrics, res.curve


def run_repeats(cfg, kg=None, out_dir=None, jobs=None):
    """Train ``cfg.repeats`` models with seeds seed, seed+1, ...; returns (MetricsReport, curves)."""
    kg = load_graph_for(cfg) if kg is None else kg
    jobs = cfg.jobs if jobs is None else jobs
    seeds = [cfg.seed + i for i in range(cfg.repeats)]
    tasks = [(cfg, kg, s, None if out_dir is None else Path(out_dir) / f"seed_{s}") for s in seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    report = MetricsReport()
    curves = []
    for metrics, curve in results:
        report.add(metrics)
        curves.append(curve)
    if out_dir is not None:
        write_json(Path(out_dir) / "metrics.json", report.to_dict())
    return report, curves


def mean_curve(curves):
    """Average loss curves epoch by epoch; adds total_std."""
    length = min(len(c) for c in curves)
    out = []
    for i in range(length):
        row = {"epoch": curves[0][i]["epoch"]}
        for k in LOSS_COLUMNS[1:]:
            row[k] = float(np.mean([c[i][k] for c in curves]))
        row["total_std"] = float(np.std([c[i]["total"] for c in curves]))
        out.append(row)
    return out


def sweep_lambda(cfg, values, kg=None, out_dir=None, jobs=None):
    """Averaged learning curves per lambda_p; N follows round(1/lambda_p)."""
    for v in values:
        if not 0.0 < v <= 1.0:
            raise ContractError(f"lambda_p values must be in (0,1], got {v}")
    kg = load_graph_for(cfg) if kg is None else kg
    summary = []
    curves_by_value = {}
    for v in values:
        cfg_v = replace(cfg, lambda_p=float(v), max_steps=0)
        sub = None if out_dir is None else Path(out_dir) / f"lambda_{v:g}"
        report, curves = run_repeats(cfg_v, kg, sub, jobs)
        curve = mean_curve(curves)
        curves_by_value[float(v)] = curve
        steps = HyperParams(num_classes=2, lambda_p=float(v)).max_steps
        summary.append({
            "lambda_p": float(v), "max_steps": steps, "single_step": steps == 1,
            "initial_loss": curve[0]["total"], "final_loss": curve[-1]["total"], "metrics": report.mean(),
        })
        if out_dir is not None:
            write_curve(Path(out_dir) / f"lambda_{v:g}.csv", curve, LOSS_COLUMNS + ("total_std",))
    if out_dir is not None:
        write_json(Path(out_dir) / "sweep.json", summary)
    return curves_by_value, summary


ABLATION_CELLS = ((False, False), (False, True), (True, False), (True, True))


def ablation_config(cfg, mp, erl):
    """-MP runs a single Markov step; -ERL trains a softmax head with cross-entropy."""
    return replace(cfg, max_steps=cfg.max_steps if mp else 1,
                   loss="evidential" if erl else "cross_entropy")


def ablate(cfg, kg=None, out_dir=None, jobs=None):
    """2x2 grid over (+-MP, +-ERL); returns a list of rows and writes ablation.csv."""
    kg = load_graph_for(cfg) if kg is None else kg
    if kg.mode != "single":
        raise ContractError("the ablation grid needs a single-label dataset")
    rows = []
    for mp, erl in ABLATION_CELLS:
        cell = f"{'+' if mp else '-'}MP,{'+' if erl else '-'}ERL"
        sub = None if out_dir is None else Path(out_dir) / cell.replace(",", "_")
        c = ablation_config(cfg, mp, erl)
        report, _ = run_repeats(c, kg, sub, jobs)
        mean, std = report.mean(), report.std()
        rows.append({
            "cell": cell, "mp": mp, "erl": erl,
            "max_steps": hyperparams_for(c, kg, 2 * kg.num_relations).max_steps, "loss": c.loss,
            "accuracy": mean["accuracy"], "accuracy_std": std["accuracy"],
            "f1_macro": mean["f1_macro"], "f1_macro_std": std["f1_macro"],
        })
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        cols = ("cell", "mp", "erl", "max_steps", "loss", "accuracy", "accuracy_std", "f1_macro", "f1_macro_std")
        with open(out_dir / "ablation.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in rows:
                w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
        write_json(out_dir / "ablation.json", rows)
    return rows
