"""Adam with bias correction, and a reduce-on-plateau learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One Adam update. ``params`` and ``grads`` are dicts keyed by name.

    Params are Tensors (or arrays); each gets a fresh data array rather
    than being written in place. Raises NonFiniteGradientError before
    touching anything if a gradient contains nan/inf.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        data = p.data if hasattr(p, "data") else p
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(data)
            v = np.zeros_like(data)
        if m.shape != data.shape or g.shape != data.shape:
            raise ValueError(f"shape mismatch for parameter {name!r}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        m_hat = m / c1
        v_hat = v / c2
        update = (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(data.dtype, copy=False)
        if hasattr(p, "data"):
            p.data = data - update
        else:
            params[name] = data - update


class PlateauScheduler:
    """Halve the learning rate after ``patience`` epochs without improvement.

    After a reduction, training should stop once the metric has failed to
    improve for ``stop_patience`` further epochs.
    """

    def __init__(self, state, patience=20, factor=0.5, stop_patience=20, min_lr=0.0):
        self.state = state
        self.patience = patience
        self.factor = factor
        self.stop_patience = stop_patience
        self.min_lr = min_lr
        self.best = float("inf")
        self.bad_epochs = 0
        self.since_reduce = None  # non-improving epochs counted after the last cut
        self.reductions = 0

    def step(self, metric):
        """Record one epoch's validation metric; return True when training should stop."""
        if metric < self.best:
            self.best = metric
            self.bad_epochs = 0
            self.since_reduce = None
            return False
        self.bad_epochs += 1
        if self.since_reduce is not None:
            self.since_reduce += 1
            if self.since_reduce >= self.stop_patience:
                return True
        if self.bad_epochs >= self.patience and self.since_reduce is None:
            self.state.lr = max(self.state.lr * self.factor, self.min_lr)
            self.reductions += 1
            self.since_reduce = 0
        return False
