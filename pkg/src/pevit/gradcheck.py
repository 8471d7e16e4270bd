"""Finite-difference checks of reverse-mode gradients, per parameter tensor."""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .model import EVAL, forward
from .params import MLP_KEYS


@dataclass
class GroupReport:
    name: str
    max_rel_error: float
    checked: int
    size: int
    passed: bool


def central_difference(f, arr, index, step=1e-4):
    """``(f(x + h) - f(x - h)) / 2h`` perturbing ``arr[index]`` in place."""
    orig = arr[index]
    arr[index] = orig + step
    up = f()
    arr[index] = orig - step
    down = f()
    arr[index] = orig
    return (up - down) / (2.0 * step)


def rel_error(analytic, numeric):
    """Norm-wise relative error, robust to coordinates whose gradient is ~0."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / scale)


def perturb(params, seed=0, scale=0.05):
    """Copy of ``params`` with noise added everywhere, so no gradient path is dead.

    The zero-initialised head otherwise blocks all gradient flow at init.
    """
    gen = np.random.default_rng(seed)
    out = params.copy()
    for t in out.tensors.values():
        t.data += gen.normal(0.0, scale, t.shape).astype(t.dtype)
    return out


def check_model(params, config, images, labels, exhaustive_max=64, samples=6, seed=0,
                step=1e-4, tol=1e-4, grad_hook=None):
    """Compare backprop and central differences for every storage in ``params``.

    A model with at most ``exhaustive_max`` parameters is checked at every
    coordinate; otherwise each tensor is checked at ``samples`` random
    coordinates (all of them when it is smaller). ``grad_hook(name, grad)``
    may rewrite the analytic gradient (negative-control testing).
    """
    if params.dtype != np.float64:
        params = params.astype(np.float64)
    images = np.asarray(images, dtype=np.float64)
    params.zero_grad()
    params.requires_grad_(True)
    loss = ag.cross_entropy(forward(params, config, images, EVAL), labels)
    loss.backward()

    def f():
        with ag.no_grad():
            return ag.cross_entropy(forward(params, config, images, EVAL), labels).item()

    gen = np.random.default_rng(seed)
    exhaustive = params.num_params() <= exhaustive_max
    reports = []
    for name, t in params.items():
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        if grad_hook is not None:
            grad = grad_hook(name, grad)
        if exhaustive or t.size <= samples:
            coords = list(np.ndindex(t.shape))
        else:
            flat = gen.choice(t.size, size=samples, replace=False)
            coords = [np.unravel_index(i, t.shape) for i in flat]
        numeric = [central_difference(f, t.data, c, step) for c in coords]
        analytic = [grad[c] for c in coords]
        err = rel_error(analytic, numeric)
        reports.append(GroupReport(name, err, len(coords), t.size, err <= tol))
    return reports


def shared_grad_decomposition(params, config, images, labels):
    """Check that each shared MLP gradient is the sum of its blocks' contributions.

    For every block ``i`` a clone pass is run in which only block ``i``
    reads the live storage and the other blocks read frozen copies of the
    same values. Returns ``{path: max |shared - sum of clone grads|}``.
    """
    images = np.asarray(images, dtype=params.dtype)

    def grads(resolver):
        params.zero_grad()
        ag.cross_entropy(forward(params, config, images, EVAL, mlp_resolver=resolver),
                         labels).backward()
        return {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in params.items() if k.startswith("mlps.")}

    full = grads(None)
    frozen = {}
    for s in params.storages():
        frozen[s] = {k: Tensor(params[f"mlps.{s}.{k}"].data.copy()) for k in MLP_KEYS}

    summed = {k: np.zeros_like(v) for k, v in full.items()}
    for live in range(params.depth):
        def resolver(block, live=live):
            if block == live:
                return params.mlp(block)
            return frozen[params.sharing_map[block]]

        for k, g in grads(resolver).items():
            summed[k] += g
    params.zero_grad()
    return {k: float(np.abs(full[k] - summed[k]).max()) for k in full}
