"""Vision Transformer forward pass over a :class:`ParamSet`."""

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, DimensionError

LN_EPS = 1e-6

TRAIN, EVAL = "train", "eval"


def build_model(config, seed, init_spec=None):
    """Initialise baseline weights from ``seed`` then apply ``config.variant``.

    Returns ``(params, stats)``; ``stats`` comes from the closed-form counter
    and is checked against the built parameters.
    """
    from .accounting import count_params, walk_params
    from .init_schemes import InitSpec, apply_variant, base_init

    config.validate()
    params = apply_variant(base_init(config, seed, init_spec or InitSpec()), config)
    stats = count_params(config)
    walked = walk_params(params)
    if walked.total_params != stats.total_params or walked.mlp_params != stats.mlp_params:
        raise AssertionError(
            f"closed-form count {stats.total_params} disagrees with built model {walked.total_params}"
        )
    return params, stats


def patchify(images, patch_size):
    """[B, C, H, W] -> [B, N, C*p*p], patches in row-major order."""
    b, c, h, w = images.shape
    p = patch_size
    x = images.reshape(b, c, h // p, p, w // p, p).transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(x.reshape(b, (h // p) * (w // p), c * p * p))


def drop_path(x, rate, mode=EVAL, rng=None):
    """Stochastic depth: zero whole samples of a residual branch with prob ``rate``.

    Survivors are scaled by ``1 / (1 - rate)`` so the expectation is unchanged.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"drop_path rate must lie in [0, 1), got {rate}")
    if mode != TRAIN or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("drop_path in train mode needs an rng")
    keep = 1.0 - rate
    mask = (rng.random(x.shape[0]) < keep).astype(x.dtype) / np.asarray(keep, dtype=x.dtype)
    return ag.mul(x, Tensor(mask.reshape((-1,) + (1,) * (x.ndim - 1))))


def attention(x, qkv_w, qkv_b, proj_w, proj_b, num_heads):
    b, t, d = x.shape
    if d % num_heads:
        raise DimensionError(f"embed dim {d} not divisible by {num_heads} heads")
    hd = d // num_heads

    def heads(i, axes):
        # slicing the fused weight is cheaper than slicing the fused activation
        y = ag.linear(x, qkv_w[i * d:(i + 1) * d], qkv_b[i * d:(i + 1) * d])
        return y.reshape(b, t, num_heads, hd).permute(*axes)

    q = heads(0, (0, 2, 1, 3)) * np.asarray(hd**-0.5, dtype=x.dtype)
    k_t = heads(1, (0, 2, 3, 1))
    v = heads(2, (0, 2, 1, 3))
    attn = ag.softmax(q @ k_t, axis=-1)
    out = (attn @ v).permute(0, 2, 1, 3).reshape(b, t, d)
    return ag.linear(out, proj_w, proj_b)


def mlp_forward(x, fc1_w, fc1_b, fc2_w, fc2_b):
    if fc1_w.shape[1] != x.shape[-1] or fc2_w.shape != (fc1_w.shape[1], fc1_w.shape[0]):
        raise DimensionError(
            f"MLP shapes fc1 {fc1_w.shape}, fc2 {fc2_w.shape} do not fit input {x.shape}"
        )
    return ag.linear(ag.gelu(ag.linear(x, fc1_w, fc1_b)), fc2_w, fc2_b)


def block_forward(x, bp, mlp, num_heads, rate, mode, rng, probe=None):
    h = ag.layer_norm(x, bp["norm1.weight"], bp["norm1.bias"], LN_EPS)
    a = attention(
        h, bp["attn.qkv.weight"], bp["attn.qkv.bias"],
        bp["attn.proj.weight"], bp["attn.proj.bias"], num_heads,
    )
    x = x + drop_path(a, rate, mode, rng)
    h = ag.layer_norm(x, bp["norm2.weight"], bp["norm2.bias"], LN_EPS)
    m = mlp_forward(h, mlp["fc1.weight"], mlp["fc1.bias"], mlp["fc2.weight"], mlp["fc2.bias"])
    if probe is not None:
        probe["mlp_in"] = h.data
        probe["mlp_out"] = m.data
    x = x + drop_path(m, rate, mode, rng)
    if probe is not None:
        probe["out"] = x.data
    return x


def forward(params, config, images, mode=EVAL, rng=None, mlp_resolver=None, probes=None):
    """Logits [B, num_classes] for a batch of images [B, C, H, W].

    ``mlp_resolver(block) -> dict`` overrides which MLP tensors a block reads
    (used to isolate one block's contribution to a shared storage).
    ``probes``, when a list, receives one dict of activations per block.
    """
    if isinstance(images, Tensor):
        images = images.data
    images = np.asarray(images)
    expect = (config.in_channels, config.image_size, config.image_size)
    if images.ndim != 4 or images.shape[1:] != expect:
        raise DimensionError(f"expected images [B, {expect}], got {images.shape}")
    dtype = params.dtype
    images = images.astype(dtype, copy=False)
    b = images.shape[0]
    d = config.embed_dim
    resolve = mlp_resolver or params.mlp

    w = params["patch_embed.weight"].reshape(d, -1)
    x = ag.linear(Tensor(patchify(images, config.patch_size)), w, params["patch_embed.bias"])
    cls = ag.broadcast_to(params["cls_token"], (b, 1, d))
    x = ag.concat([cls, x], axis=1) + params["pos_embed"]

    for i in range(config.depth):
        probe = {} if probes is not None else None
        x = block_forward(
            x, params.block(i), resolve(i), config.num_heads,
            config.drop_path_rate, mode, rng, probe,
        )
        if probes is not None:
            probes.append(probe)

    x = ag.layer_norm(x, params["norm.weight"], params["norm.bias"], LN_EPS)
    return ag.linear(x[:, 0], params["head.weight"], params["head.bias"])


def predict_logits(params, config, images, batch_size=256):
    """Eval-mode logits as a numpy array, without recording a graph."""
    out = []
    with ag.no_grad():
        for start in range(0, len(images), batch_size):
            out.append(forward(params, config, images[start:start + batch_size]).data)
    return np.concatenate(out, axis=0)
