"""Learning-rate schedule, AdamW and weight EMA over unique parameter storages."""

import math

import numpy as np

from .autograd import Tensor
from .errors import ConfigError, DimensionError
from .params import ParamSet


def cosine_lr(step, total_steps, warmup_steps, base_lr, min_lr=0.0):
    """Linear warm-up from 0 to ``base_lr``, then cosine decay to ``min_lr``."""
    if warmup_steps >= total_steps:
        raise ConfigError(f"warmup_steps {warmup_steps} must be < total_steps {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * progress))


def adamw_step(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """One in-place AdamW update of ``param`` (step count ``t`` starts at 1)."""
    if not (param.shape == grad.shape == m.shape == v.shape):
        raise DimensionError(
            f"AdamW shape mismatch: param {param.shape}, grad {grad.shape}, state {m.shape}/{v.shape}"
        )
    if weight_decay:
        param *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


def default_decay_filter(path, shape):
    """Decay matrices only: skip biases, norm affines and the token embeddings."""
    return len(shape) > 1 and path not in ("cls_token", "pos_embed")


class AdamW:
    """AdamW keyed by storage path, so a storage read by two blocks updates once."""

    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.05,
                 decay_filter=default_decay_filter):
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay = {k: decay_filter(k, t.shape) for k, t in params.items()}
        self.state = {k: (np.zeros_like(t.data), np.zeros_like(t.data)) for k, t in params.items()}
        self.t = 0
        self.updates = {k: 0 for k in params}

    def step(self, lr):
        self.t += 1
        for k, p in self.params.items():
            if p.grad is None:
                continue
            m, v = self.state[k]
            wd = self.weight_decay if self.decay[k] else 0.0
            adamw_step(p.data, p.grad, m, v, self.t, lr, self.beta1, self.beta2, self.eps, wd)
            self.updates[k] += 1

    def zero_grad(self):
        self.params.zero_grad()


def grad_norm(params):
    total = 0.0
    for t in params.tensors.values():
        if t.grad is not None:
            total += float(np.square(t.grad, dtype=np.float64).sum())
    return math.sqrt(total)


class EMA:
    """Exponential moving average of every unique storage."""

    def __init__(self, params, decay):
        if not 0.0 <= decay < 1.0:
            raise ConfigError(f"ema decay must lie in [0, 1), got {decay}")
        self.decay = decay
        self.sharing_map = dict(params.sharing_map)
        self.transform = params.transform
        self.shadow = {k: t.data.copy() for k, t in params.items()}

    def update(self, params):
        d = self.decay
        for k, t in params.items():
            s = self.shadow[k]
            if s.shape != t.shape:
                raise DimensionError(f"EMA shadow {k} has shape {s.shape}, param {t.shape}")
            s *= d
            s += (1.0 - d) * t.data

    def as_params(self):
        tensors = {k: Tensor(v.copy()) for k, v in self.shadow.items()}
        return ParamSet(tensors, self.sharing_map, self.transform)
