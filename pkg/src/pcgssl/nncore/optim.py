"""Adam, LARS and the warmup + cosine learning-rate schedule.

Optimizers mutate a ``ParameterSet`` in place and skip every frozen path.
Gradients are read from ``tensor.grad`` unless an explicit ``grads`` mapping
is passed to ``step``.
"""
import math
from dataclasses import dataclass

import numpy as np

from ..errors import StepOutOfRange


def _grads_for(params, grads):
    for path, t in params.items():
        if path in params.frozen_paths:
            continue
        g = t.grad if grads is None else grads.get(path)
        if g is not None:
            yield path, t, np.asarray(g, dtype=t.data.dtype)


class Adam:
    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads=None, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for path, t, g in _grads_for(params, grads):
            m = self.m.get(path)
            if m is None:
                m = self.m[path] = np.zeros_like(t.data)
                self.v[path] = np.zeros_like(t.data)
            v = self.v[path]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            t.data = t.data - update.astype(t.data.dtype, copy=False)


def adam_step(params, grads, t, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, state=None):
    """One Adam update at step ``t`` (1-based); ``state`` carries the moments between calls."""
    opt = state if state is not None else Adam(lr, beta1, beta2, eps)
    opt.t = t - 1
    opt.step(params, grads, lr=lr)
    return opt


class LARS:
    """SGD with momentum and a per-tensor trust ratio ``||w|| / (||g|| + wd ||w|| + eps)``.

    Bias tensors (paths ending in ``bias``) and all-zero tensors use a trust
    ratio of 1.
    """

    def __init__(self, momentum=0.9, weight_decay=0.0, eps=1e-9):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.eps = eps
        self.velocity = {}

    def trust_ratio(self, w, g, path=""):
        if path.endswith("bias"):
            return 1.0
        w_norm = float(np.linalg.norm(w))
        if w_norm == 0.0:
            return 1.0
        return w_norm / (float(np.linalg.norm(g)) + self.weight_decay * w_norm + self.eps)

    def step(self, params, lr, grads=None):
        if lr < 0:
            raise ValueError("lr must be >= 0")
        for path, t, g in _grads_for(params, grads):
            eta = self.trust_ratio(t.data, g, path)
            v = self.velocity.get(path)
            if v is None:
                v = self.velocity[path] = np.zeros_like(t.data)
            v *= self.momentum
            v += (eta * lr) * (g + self.weight_decay * t.data)
            t.data = t.data - v


def lars_step(params, grads, lr, momentum=0.9, weight_decay=0.0, eps=1e-9, state=None):
    opt = state if state is not None else LARS(momentum, weight_decay, eps)
    opt.step(params, lr, grads)
    return opt


@dataclass
class ScheduleConfig:
    peak_lr: float = 0.1
    warmup_epochs: int = 5
    total_epochs: int = 50
    alpha: float = 0.01
    steps_per_epoch: int = 1

    def __post_init__(self):
        if not 0 < self.warmup_epochs < self.total_epochs:
            raise ValueError("need 0 < warmup_epochs < total_epochs")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")

    @property
    def total_steps(self):
        return self.total_epochs * self.steps_per_epoch

    @property
    def warmup_steps(self):
        return self.warmup_epochs * self.steps_per_epoch


def lr_at(step, cfg):
    """Linear warmup to ``peak_lr`` then cosine decay to ``alpha * peak_lr``.

    The warmup reaches ``peak_lr`` on its last step; the cosine reaches
    ``alpha * peak_lr`` exactly on the final step.
    """
    if not 0 <= step < cfg.total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {cfg.total_steps})")
    warm = cfg.warmup_steps
    if step < warm:
        return cfg.peak_lr * (step + 1) / warm
    span = cfg.total_steps - 1 - warm
    progress = (step - warm) / span if span > 0 else 1.0
    return cfg.peak_lr * (cfg.alpha + (1.0 - cfg.alpha) * 0.5 * (1.0 + math.cos(math.pi * progress)))
