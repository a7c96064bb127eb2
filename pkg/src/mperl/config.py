"""Run configuration: a flat ``key = value`` text file with typed keys.

Lines starting with ``#`` or ``;`` are comments. Unknown keys are errors.
Command-line flags override file values; the merged result is the
effective configuration that gets echoed into every run directory.
"""

import configparser
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .datasets import REGISTRY
from .errors import ConfigError

CUSTOM = "custom"


@dataclass
class RunConfig:
    dataset: str = "aifb"
    data_root: str = ""
    # custom datasets only
    triples: tuple = ()
    labels: str = ""
    target_relations: tuple = ()
    mode: str = "single"
    triples_format: str = "nt"
    # model
    hidden: int = 16
    layers: int = 2
    num_bases: int = 40
    max_steps: int = 0
    lambda_p: float = 0.2
    beta: float = 0.01
    include_inverse: bool = True
    # loss and optimization
    loss: str = "evidential"
    reg_form: str = "printed"
    horizon: int = 10
    epochs: int = 100
    lr: float = 0.01
    l2: float = 5e-4
    # large-graph mode (0 = full batch, all neighbors)
    fanout: int = 0
    batch_size: int = 0
    patience: int = 5
    max_batches: int = 0
    # bookkeeping
    seed: int = 0
    repeats: int = 10
    jobs: int = 1
    output_dir: str = "runs"

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def to_text(self):
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, list):
                v = ",".join(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    @property
    def large_mode(self):
        return self.batch_size > 0 or self.fanout > 0


_FIELDS = {f.name: f for f in fields(RunConfig)}
_DEFAULTS = RunConfig()


def _coerce(key, raw):
    kind = type(getattr(_DEFAULTS, key))
    if isinstance(raw, str):
        raw = raw.strip()
    if kind is bool:
        if isinstance(raw, bool):
            return raw
        low = str(raw).lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if kind is tuple:
        if isinstance(raw, (list, tuple)):
            return tuple(str(x) for x in raw)
        return tuple(p.strip() for p in str(raw).split(",") if p.strip())
    if kind is int:
        try:
            return int(raw)
        except (TypeError, ValueError):
            raise ValueError(f"{key}: expected an integer, got {raw!r}")
    if kind is float:
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ValueError(f"{key}: expected a number, got {raw!r}")
    return str(raw)


def read_config_file(path):
    """Parse a flat key/value file into a dict of raw strings."""
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError([f"{path}: {exc}"])
    return dict(parser["run"])


def build_config(values=None, overrides=None):
    """Merge ``values`` (file) and ``overrides`` (flags) onto the defaults.

    Returns ``(RunConfig or None, errors)``.
    """
    merged = {}
    errors = []
    for source in (values or {}, overrides or {}):
        for key, raw in source.items():
            if raw is None:
                continue
            if key not in _FIELDS:
                errors.append(f"{key}: unknown key")
                continue
            try:
                merged[key] = _coerce(key, raw)
            except ValueError as exc:
                errors.append(str(exc))
    if errors:
        return None, errors
    cfg = RunConfig(**merged)
    errors = check(cfg)
    return (None, errors) if errors else (cfg, [])


def check(cfg):
    """Range and consistency checks; each message starts with the key."""
    errors = []
    if not 0.0 < cfg.lambda_p <= 1.0:
        errors.append(f"lambda_p: λ_p must be in (0,1], got {cfg.lambda_p}")
    if cfg.beta < 0:
        errors.append(f"beta: must be >= 0, got {cfg.beta}")
    if cfg.max_steps < 0:
        errors.append(f"max_steps: N must be >= 1 (or 0 for round(1/lambda_p)), got {cfg.max_steps}")
    for key in ("hidden", "layers", "num_bases", "epochs", "repeats", "jobs", "horizon", "patience"):
        if getattr(cfg, key) < 1:
            errors.append(f"{key}: must be >= 1, got {getattr(cfg, key)}")
    for key in ("fanout", "batch_size", "max_batches"):
        if getattr(cfg, key) < 0:
            errors.append(f"{key}: must be >= 0, got {getattr(cfg, key)}")
    if cfg.lr <= 0:
        errors.append(f"lr: must be > 0, got {cfg.lr}")
    if cfg.l2 < 0:
        errors.append(f"l2: must be >= 0, got {cfg.l2}")
    if cfg.loss not in ("evidential", "cross_entropy"):
        errors.append(f"loss: must be 'evidential' or 'cross_entropy', got {cfg.loss!r}")
    if cfg.reg_form not in ("printed", "textbook"):
        errors.append(f"reg_form: must be 'printed' or 'textbook', got {cfg.reg_form!r}")
    if cfg.mode not in ("single", "multi"):
        errors.append(f"mode: must be 'single' or 'multi', got {cfg.mode!r}")
    if cfg.triples_format not in ("nt", "tsv"):
        errors.append(f"triples_format: must be 'nt' or 'tsv', got {cfg.triples_format!r}")
    if cfg.dataset == CUSTOM:
        if not cfg.triples:
            errors.append("triples: required when dataset = custom")
        for p in cfg.triples:
            if not Path(p).exists():
                errors.append(f"triples: file not found: {p}")
        if not cfg.labels:
            errors.append("labels: required when dataset = custom")
        elif not Path(cfg.labels).exists():
            errors.append(f"labels: file not found: {cfg.labels}")
    elif cfg.dataset not in REGISTRY:
        errors.append(f"dataset: unknown dataset {cfg.dataset!r} (known: custom, {', '.join(sorted(REGISTRY))})")
    return errors


def validate_config(path=None, overrides=None):
    """Effective configuration from an optional file plus overrides; raises ConfigError."""
    values = read_config_file(path) if path else {}
    cfg, errors = build_config(values, overrides)
    if errors:
        raise ConfigError(errors)
    return cfg


def dataset_defaults(cfg):
    """Fill large-graph defaults from the registry when the user left them unset."""
    entry = REGISTRY.get(cfg.dataset, {})
    updates = {}
    for key in ("fanout", "batch_size", "max_steps"):
        if getattr(cfg, key) == 0 and entry.get(key):
            updates[key] = entry[key]
    if not updates:
        return cfg
    return RunConfig(**{**asdict(cfg), **updates})
