"""R-GCN encoder run inside a Markov halting process, with a Dirichlet head.

Each Markov step feeds ``[one-hot(entity) | h_prev]`` through L relational
graph-convolution layers (basis-decomposed relation weights, mean
aggregation per relation, self-loop, ReLU). The last-layer state h_n gives a
per-entity halting probability sigmoid(h_n @ U). Hidden states are
aggregated as sum_s lambda_s * h_s and mapped to Dirichlet parameters
alpha = relu(h) + 1, whose mean is the class prediction.

Storage conventions: basis matrices are kept in row-vector orientation, so a
message is ``h_j @ V_b``; the column-vector matrices (d_out x d_in) are the
transposes. The one-hot part of the first layer is stored as per-entity
tables, which makes multiplying by a one-hot vector a row lookup.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .errors import ContractError, DimensionError

CHECKPOINT_VERSION = 1


@dataclass
class HyperParams:
    num_classes: int
    hidden: tuple = (16,)
    out_dim: int = 0
    num_bases: int = 40
    max_steps: int = 0
    lambda_p: float = 0.2
    beta: float = 0.01
    mode: str = "single"
    head: str = "evidential"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.out_dim <= 0:
            self.out_dim = self.num_classes
        if self.max_steps <= 0 and 0 < self.lambda_p <= 1:
            self.max_steps = default_max_steps(self.lambda_p)
        self.validate()

    @property
    def num_layers(self):
        return len(self.hidden) + 1

    @property
    def dims(self):
        """Output width of every layer, d^[1] .. d^[L]."""
        return self.hidden + (self.out_dim,)

    def validate(self):
        problems = []
        if self.num_classes < 2:
            problems.append("num_classes (K) must be >= 2")
        if self.max_steps < 1:
            problems.append("max_steps (N) must be >= 1")
        if self.num_bases < 1:
            problems.append("num_bases (B) must be >= 1")
        if not 0.0 < self.lambda_p <= 1.0:
            problems.append("lambda_p must be in (0,1]")
        if self.beta < 0:
            problems.append("beta must be >= 0")
        if self.mode not in ("single", "multi"):
            problems.append("mode must be 'single' or 'multi'")
        if self.head not in ("evidential", "softmax"):
            problems.append("head must be 'evidential' or 'softmax'")
        if any(h < 1 for h in self.dims):
            problems.append("layer widths must be >= 1")
        if problems:
            raise ContractError("; ".join(problems))


def default_max_steps(lambda_p):
    """Prior mean number of steps, 1/lambda_p, rounded (0.2 -> 5, 1.0 -> 1)."""
    return max(1, int(round(1.0 / lambda_p)))


@dataclass
class Layer:
    coef: dc.Tensor
    basis: dc.Tensor = None
    self_loop: dc.Tensor = None
    # first layer only
    basis_onehot: dc.Tensor = None
    self_onehot: dc.Tensor = None


@dataclass
class ModelParams:
    layers: list
    halting: dc.Tensor
    projection: dc.Tensor = None

    def named_tensors(self):
        out = []
        for i, layer in enumerate(self.layers):
            for key in ("basis_onehot", "self_onehot", "basis", "self_loop", "coef"):
                t = getattr(layer, key)
                if t is not None:
                    out.append((f"layer{i}.{key}", t))
        out.append(("halting", self.halting))
        if self.projection is not None:
            out.append(("projection", self.projection))
        return out

    def tensors(self):
        return [t for _, t in self.named_tensors()]

    def first_layer_tensors(self):
        return [t for name, t in self.named_tensors() if name.startswith("layer0.")]


@dataclass
class HaltingTrace:
    """Per-step quantities of one forward pass, all with one row per node.

    ``lambdas`` holds the halting probabilities actually used (the last one
    forced to 1); ``raw_lambdas`` the sigmoid outputs before truncation.
    """

    lambdas: list = field(default_factory=list)
    raw_lambdas: list = field(default_factory=list)
    probs: list = field(default_factory=list)
    hidden: list = field(default_factory=list)
    aggregated: list = field(default_factory=list)

    @property
    def steps(self):
        return len(self.hidden)


@dataclass
class DirichletOutput:
    probs: dc.Tensor
    alpha: dc.Tensor = None
    logits: dc.Tensor = None

    @property
    def strength(self):
        return None if self.alpha is None else self.alpha.data.sum(axis=1)

    @property
    def uncertainty(self):
        """K / S per entity: 1 with no evidence, approaching 0 as evidence grows."""
        if self.alpha is None:
            return None
        return self.alpha.shape[1] / self.strength


# -- parameters ---------------------------------------------------------------
def _uniform(rng, shape, fan_in, fan_out):
    # Glorot range, capped so every initial value satisfies |w| < 1
    bound = min(np.sqrt(6.0 / (fan_in + fan_out)), 1.0)
    return dc.Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_params(hp, num_nodes, num_relations, seed):
    rng = np.random.default_rng(seed)
    B = hp.num_bases
    dims = hp.dims
    d_last = hp.out_dim
    d1 = dims[0]
    in0 = num_nodes + d_last
    layers = [Layer(
        basis_onehot=_uniform(rng, (num_nodes, B, d1), in0, d1),
        basis=_uniform(rng, (B, d_last, d1), in0, d1),
        self_onehot=_uniform(rng, (num_nodes, d1), in0, d1),
        self_loop=_uniform(rng, (d_last, d1), in0, d1),
        coef=_uniform(rng, (num_relations, B), num_relations, B),
    )]
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        layers.append(Layer(
            basis=_uniform(rng, (B, d_in, d_out), d_in, d_out),
            self_loop=_uniform(rng, (d_in, d_out), d_in, d_out),
            coef=_uniform(rng, (num_relations, B), num_relations, B),
        ))
    bound = 1.0 / np.sqrt(d_last)
    halting = dc.Tensor(rng.uniform(-bound, bound, size=(d_last, 1)), requires_grad=True)
    projection = None
    if d_last != hp.num_classes:
        projection = _uniform(rng, (d_last, hp.num_classes), d_last, hp.num_classes)
    return ModelParams(layers=layers, halting=halting, projection=projection)


def compose_weight(params, relation, layer):
    """W_r for one layer as a (d_out, d_in) matrix: sum_b a[r, b] * V_b.

    For the first layer d_in = num_nodes + d^[L], with the one-hot block first.
    """
    lay = params.layers[layer]
    a = dc.reshape(dc.take_rows(lay.coef, [relation]), (1, -1))
    B = lay.coef.shape[1]
    if layer == 0:
        n, _, d1 = lay.basis_onehot.shape
        onehot = dc.reshape(dc.transpose(lay.basis_onehot, (1, 0, 2)), (B, n * d1))
        w_onehot = dc.reshape(a @ onehot, (n, d1))
        d_last = lay.basis.shape[1]
        w_hidden = dc.reshape(a @ dc.reshape(lay.basis, (B, d_last * d1)), (d_last, d1))
        return dc.transpose(dc.concat([w_onehot, w_hidden], axis=0))
    _, d_in, d_out = lay.basis.shape
    return dc.transpose(dc.reshape(a @ dc.reshape(lay.basis, (B, d_in * d_out)), (d_in, d_out)))


def _relational_messages(h, basis, coef, adj):
    """sum_r sum_{j in N_i^r} c_ir * h_j @ W_r for a dense input h."""
    n = h.shape[0]
    B, d_in, d_out = basis.shape
    if d_out <= d_in:
        flat = dc.reshape(dc.transpose(basis, (1, 0, 2)), (d_in, B * d_out))
        table = dc.reshape(h @ flat, (n, B, d_out))
        return dc.relational_contract(table, coef, adj.edges, adj.num_nodes)
    expanded = dc.relational_expand(h, coef, adj.edges, adj.num_nodes)
    return dc.reshape(expanded, (n, B * d_in)) @ dc.reshape(basis, (B * d_in, d_out))


def markov_step(params, adj, h_prev=None, nodes=None):
    """One Markov step over every node of ``adj``.

    ``h_prev`` is the previous step's last-layer state (None or zeros at the
    first step). ``nodes`` maps local node ids to global entity ids when
    ``adj`` is a subgraph. Returns ``(h_n, lambda_n)`` with shapes
    (nodes, d^[L]) and (nodes, 1).
    """
    first = params.layers[0]
    n = adj.num_nodes
    onehot, self_onehot = first.basis_onehot, first.self_onehot
    if nodes is not None:
        onehot = dc.take_rows(onehot, nodes)
        self_onehot = dc.take_rows(self_onehot, nodes)
    if onehot.shape[0] != n:
        raise DimensionError(f"one-hot tables have {onehot.shape[0]} rows for {n} nodes")
    pre = dc.relational_contract(onehot, first.coef, adj.edges, n) + self_onehot
    if h_prev is not None:
        h_prev = dc.as_tensor(h_prev)
        if h_prev.shape != (n, first.basis.shape[1]):
            raise DimensionError(f"h_prev has shape {h_prev.shape}, expected {(n, first.basis.shape[1])}")
        if h_prev.requires_grad or np.any(h_prev.data):
            pre = pre + _relational_messages(h_prev, first.basis, first.coef, adj) + h_prev @ first.self_loop
    h = dc.relu(pre)
    for layer in params.layers[1:]:
        h = dc.relu(_relational_messages(h, layer.basis, layer.coef, adj) + h @ layer.self_loop)
    return h, dc.sigmoid(h @ params.halting)


def halting_distribution(lambdas, max_steps=None):
    """Unconditional halting probabilities p_n = lambda_n * prod_{s<n} (1 - lambda_s).

    The halting probability at step ``max_steps`` is forced to 1 so the
    p_n sum to one; missing trailing steps are filled the same way. Accepts a
    list of tensors (or arrays) of equal shape and returns ``max_steps``
    tensors.
    """
    lambdas = [dc.as_tensor(lam) for lam in lambdas]
    if max_steps is None:
        max_steps = len(lambdas)
    if not lambdas:
        raise ContractError("need at least one halting probability")
    while len(lambdas) < max_steps:
        lambdas.append(dc.ones_like(lambdas[0]))
    probs = []
    survive = None
    for n, lam in enumerate(lambdas[:max_steps], start=1):
        if n == max_steps:
            lam = dc.ones_like(lam)
        p = lam if survive is None else lam * survive
        probs.append(p)
        survive = (1.0 - lam) if survive is None else survive * (1.0 - lam)
    return probs


def aggregate_hidden(trace, up_to=None):
    """sum_{s <= up_to} lambda_s * h_s using the trace's halting probabilities."""
    up_to = trace.steps if up_to is None else up_to
    if up_to > trace.steps:
        raise ContractError(f"only {trace.steps} steps were executed")
    total = None
    for h, lam in zip(trace.hidden[:up_to], trace.lambdas[:up_to]):
        term = h * lam
        total = term if total is None else total + term
    return total


def dirichlet_head(h, projection=None):
    z = h if projection is None else h @ projection
    alpha = dc.relu(z) + 1.0
    return DirichletOutput(probs=alpha / dc.sum_(alpha, axis=1, keepdims=True), alpha=alpha)


def softmax_head(h, projection=None):
    z = h if projection is None else h @ projection
    return DirichletOutput(probs=dc.softmax(z, axis=1), logits=z)


def forward(params, adj, hp, rows=None, nodes=None):
    """Run all ``hp.max_steps`` Markov steps.

    Returns ``(outputs, trace)`` where ``outputs[n]`` is the head applied to
    the cumulative aggregation over steps 1..n+1, restricted to ``rows``
    (local node ids; default all nodes). ``outputs[-1]`` is the prediction.
    """
    head = dirichlet_head if hp.head == "evidential" else softmax_head
    trace = HaltingTrace()
    h_prev = None
    agg = None
    for n in range(1, hp.max_steps + 1):
        h, lam_raw = markov_step(params, adj, h_prev, nodes)
        lam = dc.ones_like(lam_raw) if n == hp.max_steps else lam_raw
        trace.hidden.append(h)
        trace.raw_lambdas.append(lam_raw)
        trace.lambdas.append(lam)
        agg = h * lam if agg is None else agg + h * lam
        trace.aggregated.append(agg)
        h_prev = h
    trace.probs = halting_distribution(trace.lambdas, hp.max_steps)
    outputs = []
    for agg in trace.aggregated:
        sel = agg if rows is None else dc.take_rows(agg, rows)
        outputs.append(head(sel, params.projection))
    return outputs, trace


def predict(params, adj, hp, rows=None, sample_halting=False, rng=None):
    """Class probabilities for ``rows``.

    Deterministic by default (all steps, full aggregation). With
    ``sample_halting`` each entity halts at the first step whose Bernoulli
    draw with probability lambda_n succeeds, and uses the aggregation up to
    that step.
    """
    outputs, trace = forward(params, adj, hp, rows)
    if not sample_halting:
        return outputs[-1].probs.data
    rng = np.random.default_rng() if rng is None else rng
    rows_idx = np.arange(adj.num_nodes) if rows is None else np.asarray(rows)
    lam = np.concatenate([t.data[rows_idx] for t in trace.lambdas], axis=1)
    draws = rng.random(lam.shape) < lam
    halt = draws.argmax(axis=1)
    stacked = np.stack([o.probs.data for o in outputs])
    return stacked[halt, np.arange(len(rows_idx))]


# -- checkpoints ----------------------------------------------------------------
def save_checkpoint(path, params, hp, extra=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    named = params.named_tensors()
    header = {
        "version": CHECKPOINT_VERSION,
        "hyperparams": asdict(hp),
        "shapes": {name: list(t.shape) for name, t in named},
        "extra": extra or {},
    }
    arrays = {name: t.data for name, t in named}
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path):
    data = np.load(path)
    header = json.loads(bytes(data["__header__"]).decode())
    if header["version"] != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {header['version']}")
    hp = HyperParams(**header["hyperparams"])
    tensors = {}
    for name, shape in header["shapes"].items():
        arr = data[name]
        if list(arr.shape) != shape:
            raise DimensionError(f"{name}: manifest says {shape}, file has {list(arr.shape)}")
        tensors[name] = dc.Tensor(arr, requires_grad=True)
    layers = []
    i = 0
    while f"layer{i}.coef" in tensors:
        kw = {key: tensors.get(f"layer{i}.{key}") for key in
              ("coef", "basis", "self_loop", "basis_onehot", "self_onehot")}
        layers.append(Layer(**kw))
        i += 1
    params = ModelParams(layers=layers, halting=tensors["halting"], projection=tensors.get("projection"))
    return params, hp, header["extra"]
