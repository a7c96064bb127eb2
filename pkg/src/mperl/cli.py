"""``mperl`` command line: prepare, train, eval, sweep-lambda, ablate, stats.

Every command that trains writes a run directory under ``--output``
containing ``config.txt`` (the effective configuration, loadable again with
``--config``), ``run.log`` and its metrics/CSV artifacts.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import build_config, read_config_file
from .datasets import REGISTRY, prepare
from .errors import ConfigError, ContractError, IngestionError, ParseError, TrainingError
from .kgdata import degree_histogram
from .model import load_checkpoint
from .trainer import (
    ablate, evaluate, load_graph_for, run_repeats, sweep_lambda, write_json,
)

log = logging.getLogger("mperl")

# flag name -> config key
OVERRIDES = {
    "dataset": "dataset", "seed": "seed", "epochs": "epochs", "lambda_p": "lambda_p", "beta": "beta",
    "max_steps": "max_steps", "output": "output_dir", "data_root": "data_root", "jobs": "jobs",
    "repeats": "repeats", "hidden": "hidden", "lr": "lr", "loss": "loss", "fanout": "fanout",
    "batch_size": "batch_size",
}


def _add_run_flags(p):
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--dataset", help="registry name or 'custom'")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lambda-p", dest="lambda_p", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--max-steps", dest="max_steps", type=int, help="N; 0 means round(1/lambda_p)")
    p.add_argument("--hidden", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--loss", choices=("evidential", "cross_entropy"))
    p.add_argument("--fanout", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--output", help="output root directory")
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--jobs", type=int)
    p.add_argument("--repeats", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="mperl", description="Markov-halting R-GCN with an evidential head.")
    parser.add_argument("--version", action="version", version=f"mperl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="convert unpacked benchmark files into the dataset cache")
    p.add_argument("--dataset", required=True, choices=sorted(REGISTRY))
    p.add_argument("--source", required=True, help="directory with the unpacked public files")
    p.add_argument("--data-root", dest="data_root")

    p = sub.add_parser("train", help="train (and test) one model per seed")
    _add_run_flags(p)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint on the test split")
    _add_run_flags(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("sweep-lambda", help="learning curves for several lambda_p values")
    _add_run_flags(p)
    p.add_argument("--values", default="1.0,0.5,0.2,0.1", help="comma separated lambda_p values")

    p = sub.add_parser("ablate", help="the (+-MP, +-ERL) grid")
    _add_run_flags(p)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("--config")
    p.add_argument("--dataset")
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--degrees", action="store_true", help="also print the degree histogram")
    return parser


def effective_config(args, command):
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    overrides = {key: getattr(args, flag) for flag, key in OVERRIDES.items() if hasattr(args, flag)}
    # a plain `train` is a single run unless repeats were asked for
    if command in ("train", "eval") and "repeats" not in values and overrides.get("repeats") is None:
        overrides["repeats"] = 1
    cfg, errors = build_config(values, overrides)
    if errors:
        raise ConfigError(errors)
    return cfg


def _run_dir(cfg, command):
    name = f"{cfg.dataset}_seed{cfg.seed}"
    path = Path(cfg.output_dir) / command / name
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    handler = logging.FileHandler(path / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(handler)
    return path


def _print_json(payload):
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_prepare(args):
    out = prepare(args.dataset, args.source, args.data_root)
    print(f"prepared {args.dataset} in {out}")


def cmd_stats(args):
    cfg = effective_config(args, "stats")
    kg = load_graph_for(cfg)
    stats = kg.stats()
    expected = REGISTRY.get(cfg.dataset, {}).get("expected")
    payload = {"stats": stats}
    if expected:
        payload["reference"] = expected
    if args.degrees:
        payload["degree_histogram"] = [[int(d), int(c)] for d, c in degree_histogram(kg)]
    _print_json(payload)


def cmd_train(args):
    cfg = effective_config(args, "train")
    run_dir = _run_dir(cfg, "train")
    log.info("training %s: %d run(s), %d epochs", cfg.dataset, cfg.repeats, cfg.epochs)
    report, _ = run_repeats(cfg, out_dir=run_dir)
    _print_json({"mean": report.mean(), "std": report.std(), "run_dir": str(run_dir)})


def cmd_eval(args):
    cfg = effective_config(args, "eval")
    params, hp, extra = load_checkpoint(args.checkpoint)
    if args.dataset is None and extra.get("dataset"):
        cfg = replace(cfg, dataset=extra["dataset"])
    kg = load_graph_for(cfg)
    metrics = evaluate(params, hp, kg)
    run_dir = _run_dir(cfg, "eval")
    write_json(run_dir / "metrics.json", metrics)
    _print_json(metrics)


def cmd_sweep(args):
    cfg = effective_config(args, "sweep-lambda")
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError([f"values: expected comma separated numbers, got {args.values!r}"])
    bad = [v for v in values if not 0.0 < v <= 1.0]
    if bad or not values:
        raise ConfigError([f"values: λ_p must be in (0,1], got {bad or args.values}"])
    run_dir = _run_dir(cfg, "sweep-lambda")
    _, summary = sweep_lambda(cfg, values, out_dir=run_dir)
    _print_json(summary)


def cmd_ablate(args):
    cfg = effective_config(args, "ablate")
    run_dir = _run_dir(cfg, "ablate")
    rows = ablate(cfg, out_dir=run_dir)
    _print_json(rows)


COMMANDS = {
    "prepare": cmd_prepare, "train": cmd_train, "eval": cmd_eval, "sweep-lambda": cmd_sweep,
    "ablate": cmd_ablate, "stats": cmd_stats,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 2
    except (IngestionError, ParseError, ContractError, TrainingError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        for h in [h for h in log.handlers if isinstance(h, logging.FileHandler)]:
            log.removeHandler(h)
            h.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
