"""Parameter, MAC, memory and throughput accounting.

Counts are closed-form from a :class:`ModelConfig`; :func:`walk_params`
recounts from a built :class:`ParamSet` so the two can be cross-checked.
MACs are reported as "GFLOPs" with one multiply-accumulate counted once.
"""

import csv
import io
import platform
import statistics
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .config import Baseline, Grouped, Shallow
from .errors import ConfigError, MeasurementError

CONVENTIONS = ("dense_only", "full")


@dataclass
class ModelStats:
    total_params: int
    mlp_params: int
    unique_mlp_blocks: int
    referenced_params: int
    gmacs: float
    expansion_ratio: Fraction
    breakdown: list = field(default_factory=list, repr=False)

    @property
    def unique_params(self):
        return self.total_params


@dataclass
class EfficiencyReport:
    acc_per_mparam: float
    acc_per_gflop: float
    throughput_ratio: float = None


def param_shapes(config):
    """``(path, shape, references)`` for every storage implied by ``config``."""
    d, c, p, nc = config.embed_dim, config.in_channels, config.patch_size, config.num_classes
    h = config.mlp_width
    out = [
        ("patch_embed.weight", (d, c, p, p), 1),
        ("patch_embed.bias", (d,), 1),
        ("cls_token", (1, 1, d), 1),
        ("pos_embed", (1, config.num_tokens, d), 1),
    ]
    for i in range(config.depth):
        b = f"blocks.{i}."
        out += [
            (b + "norm1.weight", (d,), 1),
            (b + "norm1.bias", (d,), 1),
            (b + "attn.qkv.weight", (3 * d, d), 1),
            (b + "attn.qkv.bias", (3 * d,), 1),
            (b + "attn.proj.weight", (d, d), 1),
            (b + "attn.proj.bias", (d,), 1),
            (b + "norm2.weight", (d,), 1),
            (b + "norm2.bias", (d,), 1),
        ]
    refs = {}
    for s in config.sharing_map().values():
        refs[s] = refs.get(s, 0) + 1
    for s, r in sorted(refs.items()):
        m = f"mlps.{s}."
        out += [
            (m + "fc1.weight", (h, d), r),
            (m + "fc1.bias", (h,), r),
            (m + "fc2.weight", (d, h), r),
            (m + "fc2.bias", (d,), r),
        ]
    out += [
        ("norm.weight", (d,), 1),
        ("norm.bias", (d,), 1),
        ("head.weight", (nc, d), 1),
        ("head.bias", (nc,), 1),
    ]
    return out


def mlp_block_params(d, h):
    return d * h + h + h * d + d


def count_params(config, variant=None):
    """Exact parameter counts without building the model."""
    if variant is not None:
        config = config.with_variant(variant)
    d, c, p, nc, L = (config.embed_dim, config.in_channels, config.patch_size,
                      config.num_classes, config.depth)
    embed = d * c * p * p + d + d + config.num_tokens * d
    attn_block = 4 * d + (3 * d * d + 3 * d) + (d * d + d)
    unique = config.num_mlp_storages
    mlp = unique * mlp_block_params(d, config.mlp_width)
    tail = 2 * d + nc * d + nc
    total = embed + L * attn_block + mlp + tail
    referenced = total + (L - unique) * mlp_block_params(d, config.mlp_width)
    breakdown = [(path, shape, int(np.prod(shape)), r) for path, shape, r in param_shapes(config)]
    return ModelStats(
        total_params=total,
        mlp_params=mlp,
        unique_mlp_blocks=unique,
        referenced_params=referenced,
        gmacs=count_flops(config),
        expansion_ratio=config.expansion_ratio,
        breakdown=breakdown,
    )


def walk_params(params):
    """Counts obtained by summing the arrays actually held in ``params``."""
    total = sum(t.size for t in params.tensors.values())
    mlp = sum(t.size for k, t in params.items() if k.startswith("mlps."))
    referenced = sum(t.size for _, t in params.resolved())
    return ModelStats(
        total_params=total,
        mlp_params=mlp,
        unique_mlp_blocks=params.num_mlp_storages,
        referenced_params=referenced,
        gmacs=float("nan"),
        expansion_ratio=Fraction(params[f"mlps.{params.storages()[0]}.fc1.weight"].shape[0],
                                 params["norm.weight"].shape[0]),
        breakdown=[(k, t.shape, t.size, 1) for k, t in params.items()],
    )


def count_macs(config, convention="dense_only"):
    """Multiply-accumulates for one image.

    ``dense_only`` counts the patch embedding, qkv and output projections,
    MLPs and classifier head. ``full`` also counts the two token-by-token
    products (scores and value aggregation). Biases, norms, softmax and
    activations are never counted.
    """
    if convention not in CONVENTIONS:
        raise ConfigError(f"unknown FLOP convention {convention!r}")
    d, t, h = config.embed_dim, config.num_tokens, config.mlp_width
    c, p = config.in_channels, config.patch_size
    patch = config.num_patches * d * c * p * p
    per_block = t * d * 3 * d + t * d * d + 2 * t * d * h
    if convention == "full":
        per_block += 2 * t * t * d
    head = d * config.num_classes
    return patch + config.depth * per_block + head


def count_flops(config, variant=None, convention="dense_only"):
    """GMACs per image (reported as GFLOPs)."""
    if variant is not None:
        config = config.with_variant(variant)
    return count_macs(config, convention) / 1e9


def efficiency_ratios(stats, top1, throughput=None, baseline_throughput=None):
    if not 0 < top1 <= 100:
        raise ValueError(f"top-1 accuracy must lie in (0, 100], got {top1}")
    ratio = None
    if throughput is not None and baseline_throughput:
        ratio = throughput / baseline_throughput
    return EfficiencyReport(
        acc_per_mparam=top1 / (stats.total_params / 1e6),
        acc_per_gflop=top1 / stats.gmacs,
        throughput_ratio=ratio,
    )


@dataclass
class MemoryEstimate:
    params: int
    optimizer: int
    ema: int
    activations: int

    @property
    def total(self):
        return self.params + self.optimizer + self.ema + self.activations


def activation_elements(config):
    """Per-image elements kept for the backward pass (analytic estimate)."""
    d, t, h, heads = config.embed_dim, config.num_tokens, config.mlp_width, config.num_heads
    per_block = 8 * t * d + 2 * heads * t * t + 2 * t * h
    return config.num_patches * config.in_channels * config.patch_size**2 + \
        config.depth * per_block + 2 * t * d


def estimate_memory(config, batch, optimizer="adamw", ema=True, bytes_per_value=4):
    """Training-time memory in bytes: weights, AdamW moments, EMA shadow, activations."""
    if optimizer != "adamw":
        raise ConfigError(f"unsupported optimizer {optimizer!r}")
    if batch < 0:
        raise ValueError("batch must be non-negative")
    n = count_params(config).total_params * bytes_per_value
    return MemoryEstimate(
        params=n,
        optimizer=2 * n,
        ema=n if ema else 0,
        activations=batch * activation_elements(config) * bytes_per_value,
    )


@dataclass
class Throughput:
    mean: float
    std: float
    samples: list

    @property
    def cv(self):
        return self.std / self.mean if self.mean else float("inf")


def measure_throughput(params, config, batch, warmup_iters=2, timed_iters=5, seed=0):
    """Eval-mode forward images/second over ``timed_iters`` runs after warm-up.

    Wall-clock numbers need an otherwise idle machine to be meaningful.
    """
    from . import autograd as ag
    from . import rng as rng_mod
    from .model import forward

    if timed_iters < 3:
        raise MeasurementError(f"timed_iters must be >= 3 to report spread, got {timed_iters}")
    if batch < 1:
        raise MeasurementError("batch must be positive")
    gen = rng_mod.stream(seed, "bench")
    shape = (batch, config.in_channels, config.image_size, config.image_size)
    images = gen.standard_normal(shape).astype(params.dtype)
    samples = []
    with ag.no_grad():
        for i in range(warmup_iters + timed_iters):
            t0 = time.perf_counter()
            forward(params, config, images)
            dt = time.perf_counter() - t0
            if i >= warmup_iters:
                samples.append(batch / dt)
    return Throughput(statistics.fmean(samples), statistics.stdev(samples), samples)


MACHINE_NOTE = (
    f"measured on {platform.machine()} / {platform.processor() or 'unknown cpu'}; "
    "absolute img/s are hardware-specific, compare ratios only"
)


# ---------------------------------------------------------------- reports

REPORT_COLUMNS = ("model", "params", "unique_mlp", "mlp_params", "gmacs", "expansion")


def variant_rows(config):
    rows = []
    for v in (Baseline(), Grouped(2), Shallow(Fraction(1, 2))):
        try:
            cfg = config.with_variant(v)
        except ConfigError:
            continue
        s = count_params(cfg)
        rows.append({
            "model": v.label,
            "params": s.total_params,
            "unique_mlp": s.unique_mlp_blocks,
            "mlp_params": s.mlp_params,
            "gmacs": s.gmacs,
            "expansion": s.expansion_ratio,
        })
    return rows


def _millions(n):
    return f"{n / 1e6:.1f}M"


def _expansion(r):
    r = Fraction(r)
    return f"{r.numerator}x" if r.denominator == 1 else f"{float(r):g}x"


def format_table(rows, exact=False):
    """Aligned text table in the Model/Params/MLP/Unique/GFLOPs/Expansion layout."""
    header = ("Model", "Params", "MLP", "Unique", "GFLOPs", "Expansion")
    body = []
    for r in rows:
        if exact:
            cells = (r["model"], f"{r['params']:,}", f"{r['mlp_params']:,}",
                     str(r["unique_mlp"]), f"{r['gmacs']:.4f}", _expansion(r["expansion"]))
        else:
            cells = (r["model"], _millions(r["params"]), _millions(r["mlp_params"]),
                     str(r["unique_mlp"]), f"{r['gmacs']:.1f}", _expansion(r["expansion"]))
        body.append(cells)
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
    lines = [" ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in [header, *body]]
    return "\n".join(lines)


def to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([r["model"], r["params"], r["unique_mlp"], r["mlp_params"],
                    f"{r['gmacs']:.6f}", _expansion(r["expansion"])])
    return buf.getvalue()
