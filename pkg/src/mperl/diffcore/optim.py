"""Bias-corrected Adam."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


class Adam:
    def __init__(self, params, lr=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
                               m=[np.zeros_like(p.data) for p in self.params],
                               v=[np.zeros_like(p.data) for p in self.params])

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, grads=None):
        """Apply one update. ``grads`` defaults to each parameter's ``.grad``."""
        if grads is None:
            grads = [p.grad for p in self.params]
        elif isinstance(grads, dict):
            grads = [grads.get(p) for p in self.params]
        for p, g in zip(self.params, grads):
            if g is None:
                raise ContractError(f"no gradient for parameter {p.name or p.shape}")
        s = self.state
        s.step += 1
        c1 = 1.0 - s.beta1 ** s.step
        c2 = 1.0 - s.beta2 ** s.step
        for p, g, m, v in zip(self.params, grads, s.m, s.v):
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * g * g
            p.data -= s.lr * (m / c1) / (np.sqrt(v / c2) + s.eps)


def adam_step(params, grads, state):
    """Functional form: update ``params`` in place from ``grads`` and advance ``state``."""
    opt = Adam.__new__(Adam)
    opt.params = list(params)
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in opt.params]
        state.v = [np.zeros_like(p.data) for p in opt.params]
    opt.state = state
    opt.step(grads)
    return opt.params
