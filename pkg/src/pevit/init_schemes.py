"""Base initialisation and the two MLP parameter-reduction transforms."""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import rng as rng_mod
from .autograd import Tensor
from .config import Grouped, Shallow, as_fraction
from .errors import ConfigError, ContractError
from .params import MLP_KEYS, ParamSet, mlp_path

INV_SQRT2 = math.sqrt(0.5)  # correctly rounded; 1 / sqrt(2.0) is one ulp low

# fc2.bias is deliberately not scaled.
SHARED_SCALED_KEYS = ("fc1.weight", "fc2.weight", "fc1.bias")


@dataclass(frozen=True)
class InitSpec:
    trunc_normal_std: float = 0.02
    truncation: float = 2.0  # in units of std
    bias_fill: float = 0.0
    token_std: float = 0.02
    head_init: str = "zeros"

    def __post_init__(self):
        if self.trunc_normal_std <= 0 or self.token_std <= 0:
            raise ConfigError("initialisation std must be positive")
        if self.head_init not in ("zeros", "trunc_normal"):
            raise ConfigError(f"unknown head_init {self.head_init!r}")


def trunc_normal(gen, shape, std, bound):
    """Normal(0, std) restricted to [-bound*std, bound*std] by redrawing rejects."""
    out = gen.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = gen.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


def trunc_normal_effective_std(std, bound=2.0):
    """Standard deviation of a symmetric truncated normal."""
    from scipy.stats import norm

    z = norm.cdf(bound) - norm.cdf(-bound)
    return std * math.sqrt(1.0 - 2.0 * bound * norm.pdf(bound) / z)


def base_init(config, seed, spec=InitSpec(), dtype=np.float32):
    """Full-width, unshared parameters for ``config``, ignoring its variant.

    Draw order is fixed (patch embedding, class token, positional
    embedding, then per block qkv, proj, fc1, fc2) so that every variant
    built from one seed starts from bit-identical baseline weights.
    """
    gen = rng_mod.stream(seed, "init")
    d, h, c, p = config.embed_dim, config.mlp_hidden, config.in_channels, config.patch_size
    std, bound = spec.trunc_normal_std, spec.truncation

    def tn(*shape, s=std):
        return trunc_normal(gen, shape, s, bound)

    def fill(*shape, value=spec.bias_fill):
        return np.full(shape, value)

    arrays = {
        "patch_embed.weight": tn(d, c, p, p),
        "patch_embed.bias": fill(d),
        "cls_token": tn(1, 1, d, s=spec.token_std),
        "pos_embed": tn(1, config.num_tokens, d, s=spec.token_std),
    }
    for i in range(config.depth):
        b = f"blocks.{i}."
        arrays[b + "norm1.weight"] = np.ones(d)
        arrays[b + "norm1.bias"] = np.zeros(d)
        arrays[b + "attn.qkv.weight"] = tn(3 * d, d)
        arrays[b + "attn.qkv.bias"] = fill(3 * d)
        arrays[b + "attn.proj.weight"] = tn(d, d)
        arrays[b + "attn.proj.bias"] = fill(d)
        arrays[b + "norm2.weight"] = np.ones(d)
        arrays[b + "norm2.bias"] = np.zeros(d)
        arrays[mlp_path(i, "fc1.weight")] = tn(h, d)
        arrays[mlp_path(i, "fc1.bias")] = fill(h)
        arrays[mlp_path(i, "fc2.weight")] = tn(d, h)
        arrays[mlp_path(i, "fc2.bias")] = fill(d)
    arrays["norm.weight"] = np.ones(d)
    arrays["norm.bias"] = np.zeros(d)
    if spec.head_init == "zeros":
        arrays["head.weight"] = np.zeros((config.num_classes, d))
    else:
        arrays["head.weight"] = tn(config.num_classes, d)
    arrays["head.bias"] = np.zeros(config.num_classes)

    tensors = {k: Tensor(v.astype(dtype), requires_grad=True) for k, v in arrays.items()}
    return ParamSet(tensors, {i: i for i in range(config.depth)})


def _require_fresh(params, what):
    if params.transform is not None:
        raise ContractError(f"{what} needs a full-width unshared ParamSet, got {params.transform!r}")
    if any(params.sharing_map[i] != i for i in params.sharing_map):
        raise ContractError(f"{what} needs an unshared ParamSet")


def scale_shared(arr, factor=INV_SQRT2):
    """``factor * arr`` evaluated in float64 and rounded once to ``arr``'s dtype."""
    return (arr.astype(np.float64) * factor).astype(arr.dtype)


def apply_grouped_sharing(params, group_size, factor=INV_SQRT2):
    """Tie MLPs of consecutive ``group_size`` blocks to the first block's weights.

    The retained storage has ``fc1.weight``, ``fc2.weight`` and ``fc1.bias``
    multiplied by ``factor`` (1/sqrt(2)); ``fc2.bias`` is kept as drawn. The
    other members' MLP tensors are dropped.
    """
    _require_fresh(params, "apply_grouped_sharing")
    depth = params.depth
    if group_size < 1 or depth % group_size:
        raise ConfigError(f"depth {depth} is not divisible by group_size {group_size}")
    tensors = {k: t for k, t in params.items() if not k.startswith("mlps.")}
    for g in range(depth // group_size):
        src = g * group_size
        for key in MLP_KEYS:
            arr = params[mlp_path(src, key)].data
            if key in SHARED_SCALED_KEYS:
                arr = scale_shared(arr, factor)
            else:
                arr = arr.copy()
            tensors[mlp_path(g, key)] = Tensor(arr, requires_grad=True)
    tensors = _reorder_like(params, tensors)
    sharing = {i: i // group_size for i in range(depth)}
    return ParamSet(tensors, sharing, transform=f"grouped:{group_size}")


def slice_shallow(params, width_ratio):
    """Keep the leading ``width_ratio`` share of every MLP's hidden units.

    fc1 keeps its first rows (and matching bias entries), fc2 its first
    columns; fc2's bias is kept whole since its output size is unchanged.
    """
    _require_fresh(params, "slice_shallow")
    ratio = as_fraction(width_ratio)
    if not 0 < ratio <= 1:
        raise ConfigError(f"width_ratio must lie in (0, 1], got {ratio}")
    hidden = params[mlp_path(0, "fc1.weight")].shape[0]
    width = ratio * hidden
    if width.denominator != 1:
        raise ConfigError(f"width_ratio {ratio} x hidden {hidden} is not an integer")
    width = int(width)
    tensors = {}
    for k, t in params.items():
        arr = t.data
        if k.startswith("mlps."):
            if k.endswith("fc1.weight") or k.endswith("fc1.bias"):
                arr = arr[:width]
            elif k.endswith("fc2.weight"):
                arr = arr[:, :width]
        tensors[k] = Tensor(np.ascontiguousarray(arr).copy(), requires_grad=True)
    return ParamSet(tensors, params.sharing_map, transform=f"shallow:{Fraction(ratio)}")


def _reorder_like(params, tensors):
    # keep canonical path order: embeddings, blocks, mlps, final norm, head
    order = [k for k in params if not k.startswith("mlps.") and not k.startswith(("norm.", "head."))]
    order += sorted((k for k in tensors if k.startswith("mlps.")), key=_mlp_sort_key)
    order += [k for k in params if k.startswith(("norm.", "head."))]
    return {k: tensors[k] for k in order}


def _mlp_sort_key(path):
    _, s, rest = path.split(".", 2)
    return int(s), MLP_KEYS.index(rest)


def apply_variant(params, config):
    """Apply ``config.variant``'s transform to freshly initialised parameters."""
    v = config.variant
    if isinstance(v, Grouped):
        return apply_grouped_sharing(params, v.group_size)
    if isinstance(v, Shallow):
        return slice_shallow(params, v.width_ratio)
    return params
