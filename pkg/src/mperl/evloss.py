"""Evidential loss weighted over halting steps plus halting regularization.

For a batch of entities the objective is

    mean_i sum_n p_n,i * (err_n,i + var_n,i + delta_t * KL_Dir(alpha~_n,i))
      + beta * mean_i mean_{n<N} KL_geo(lambda_n,i, lambda_p)

where step-n predictions come from the cumulative aggregation of hidden
states up to step n. The geometric term skips the last step because its
halting probability is fixed to 1 and carries no learnable signal.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ContractError, DimensionError, DomainError

CLAMP_EPS = 1e-6


@dataclass
class LossConfig:
    beta: float = 0.01
    lambda_p: float = 0.2
    horizon: int = 10
    kind: str = "evidential"
    reg_form: str = "printed"

    def __post_init__(self):
        if self.beta < 0:
            raise ContractError("beta must be >= 0")
        if self.horizon < 1:
            raise ContractError("annealing horizon must be >= 1")
        if self.kind not in ("evidential", "cross_entropy"):
            raise ContractError(f"unknown loss kind {self.kind!r}")
        if self.reg_form not in ("printed", "textbook"):
            raise ContractError(f"unknown regularizer form {self.reg_form!r}")


@dataclass
class LossBreakdown:
    total: dc.Tensor
    err: float
    var: float
    unc: float
    reg: float
    delta: float

    def as_row(self):
        return {"total": self.total.item(), "err": self.err, "var": self.var, "unc": self.unc,
                "reg": self.reg, "delta_t": self.delta}


def err_var(y, probs, alpha):
    """Per-entity squared error and Dirichlet variance terms, each shaped (m, 1)."""
    y, probs, alpha = dc.as_tensor(y), dc.as_tensor(probs), dc.as_tensor(alpha)
    if not (y.shape == probs.shape == alpha.shape):
        raise DimensionError(f"shape mismatch: y {y.shape}, probs {probs.shape}, alpha {alpha.shape}")
    diff = y - probs
    err = dc.sum_(diff * diff, axis=-1, keepdims=True)
    strength = dc.sum_(alpha, axis=-1, keepdims=True)
    var = dc.sum_(probs * (1.0 - probs), axis=-1, keepdims=True) / (strength + 1.0)
    return err, var


def adjust_evidence(y, alpha):
    """Remove the evidence of the true classes: y + (1 - y) * alpha."""
    y = dc.as_tensor(y)
    return y + (1.0 - y) * alpha


def kl_dirichlet_uniform(alpha):
    """KL(Dir(alpha) || Dir(1, ..., 1)) per row, shaped (m, 1)."""
    alpha = dc.as_tensor(alpha)
    if np.any(~(alpha.data > 0)):
        raise DomainError("Dirichlet parameters must be positive")
    k = alpha.shape[-1]
    strength = dc.sum_(alpha, axis=-1, keepdims=True)
    log_norm = dc.lgamma(strength) - math.lgamma(k) - dc.sum_(dc.lgamma(alpha), axis=-1, keepdims=True)
    digamma_gap = dc.digamma(alpha) - dc.digamma(strength)
    return log_norm + dc.sum_((alpha - 1.0) * digamma_gap, axis=-1, keepdims=True)


def annealing(epoch, horizon=10):
    """delta_t = min(1, t / horizon)."""
    if epoch < 0:
        raise ContractError("epoch must be >= 0")
    return min(1.0, epoch / horizon)


def kl_geometric(lam, lambda_p, form="printed", eps=CLAMP_EPS):
    """Halting regularizer between learned lambda_n and the prior lambda_p.

    ``printed``: log(l/lp) + (1/l) * log((1-l)/(1-lp)), which can go
    negative. ``textbook``: the KL between two geometric distributions,
    log(l/lp) + ((1-l)/l) * log((1-l)/(1-lp)). Both are clamped to
    [eps, 1 - eps].
    """
    lam = dc.clamp(dc.as_tensor(lam), eps, 1.0 - eps)
    lp = min(max(float(lambda_p), eps), 1.0 - eps)
    ratio_log = dc.log(lam * (1.0 / lp))
    tail_log = dc.log((1.0 - lam) * (1.0 / (1.0 - lp)))
    coeff = 1.0 / lam if form == "printed" else (1.0 - lam) / lam
    return ratio_log + coeff * tail_log


def cross_entropy(probs, y, multilabel=False, eps=1e-12):
    """Mean categorical cross-entropy, or per-class binary cross-entropy when ``multilabel``."""
    probs, y = dc.as_tensor(probs), dc.as_tensor(y)
    if probs.shape != y.shape:
        raise DimensionError(f"shape mismatch: probs {probs.shape}, y {y.shape}")
    logp = dc.log(dc.clamp(probs, eps, 1.0))
    if not multilabel:
        return dc.mean(-dc.sum_(y * logp, axis=-1))
    log1m = dc.log(dc.clamp(1.0 - probs, eps, 1.0))
    return dc.mean(-dc.mean(y * logp + (1.0 - y) * log1m, axis=-1))


def _rows_cross_entropy(out, y, multilabel):
    if out.logits is not None and not multilabel:
        return -dc.sum_(y * dc.log_softmax(out.logits, axis=-1), axis=-1, keepdims=True)
    logp = dc.log(dc.clamp(out.probs, 1e-12, 1.0))
    if not multilabel:
        return -dc.sum_(y * logp, axis=-1, keepdims=True)
    log1m = dc.log(dc.clamp(1.0 - out.probs, 1e-12, 1.0))
    return -dc.mean(y * logp + (1.0 - y) * log1m, axis=-1, keepdims=True)


def total_loss(outputs, trace, y, cfg, epoch, rows=None):
    """Combine per-step outputs into the training objective.

    ``outputs`` and ``y`` cover the selected entities; ``rows`` picks the
    same entities out of the full-graph ``trace``. Multi-hot targets are
    normalized to sum to one for the error term.
    """
    y = np.asarray(y, dtype=np.float64)
    y_bin = (y > 0).astype(np.float64)
    counts = y_bin.sum(axis=1, keepdims=True)
    multilabel = bool(np.any(counts > 1))
    y_fit = dc.Tensor(y_bin / np.maximum(counts, 1.0))
    y_bin = dc.Tensor(y_bin)
    delta = annealing(epoch, cfg.horizon)

    def pick(t):
        return t if rows is None else dc.take_rows(t, rows)

    probs = [pick(p) for p in trace.probs]
    err = var = unc = None
    for p, out in zip(probs, outputs):
        if cfg.kind == "evidential":
            if out.alpha is None:
                raise ContractError("evidential loss needs Dirichlet outputs")
            e, v = err_var(y_fit, out.probs, out.alpha)
            kl = kl_dirichlet_uniform(adjust_evidence(y_bin, out.alpha))
            terms = [p * e, p * v, p * kl]
        else:
            terms = [p * _rows_cross_entropy(out, y_bin if multilabel else y_fit, multilabel)]
        err = terms[0] if err is None else err + terms[0]
        if cfg.kind == "evidential":
            var = terms[1] if var is None else var + terms[1]
            unc = terms[2] if unc is None else unc + terms[2]

    err_m = dc.mean(err)
    total = err_m
    var_v = unc_v = 0.0
    if cfg.kind == "evidential":
        var_m, unc_m = dc.mean(var), dc.mean(unc)
        total = total + var_m + unc_m * delta
        var_v, unc_v = var_m.item(), unc_m.item()

    learned = trace.raw_lambdas[: len(trace.probs) - 1]
    reg_v = 0.0
    if learned:
        reg = None
        for lam in learned:
            term = kl_geometric(pick(lam), cfg.lambda_p, cfg.reg_form)
            reg = term if reg is None else reg + term
        reg_m = dc.mean(reg) * (1.0 / len(learned))
        reg_v = reg_m.item()
        if cfg.beta:
            total = total + reg_m * cfg.beta
    return LossBreakdown(total=total, err=err_m.item(), var=var_v, unc=unc_v, reg=reg_v, delta=delta)
