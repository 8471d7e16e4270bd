"""Training loop: AdamW + cosine schedule, MixUp/CutMix, DropPath, EMA evaluation."""

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import rng as rng_mod
from .checkpoint import save_checkpoint
from .data import augment_batch
from .errors import ConfigError, NonFiniteLossError
from .metrics import stability_metrics
from .mixing import mix_batch
from .model import TRAIN, build_model, forward, predict_logits
from .optim import EMA, AdamW, cosine_lr, grad_norm

log = logging.getLogger(__name__)

CSV_COLUMNS = ("epoch", "train_loss", "val_top1", "val_top5", "ema_val_top1", "lr", "epoch_seconds")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    warmup_epochs: int = 5
    base_lr: float = 1e-3
    min_lr: float = 1e-5
    batch_size: int = 1024
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    mixup_alpha: float = 0.8
    cutmix_alpha: float = 1.0
    mix_switch_prob: float = 0.5
    drop_path: float = 0.1
    ema_decay: float = 0.9998
    augment: bool = True
    seeds: tuple = (42, 123)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(
                f"warmup_epochs {self.warmup_epochs} must be < epochs {self.epochs}"
            )
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")
        if not 0.0 <= self.drop_path < 1.0:
            raise ConfigError(f"drop_path must lie in [0, 1), got {self.drop_path}")
        if self.mixup_alpha < 0 or self.cutmix_alpha < 0:
            raise ConfigError("mixing alphas must be non-negative")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def to_dict(self):
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# Desk-scale recipe: the ImageNet recipe with a short schedule, small batches
# and an EMA horizon of ~100 steps instead of ~5000.
DESK = TrainConfig(epochs=30, warmup_epochs=5, batch_size=64, ema_decay=0.99, seeds=(42, 123))


@dataclass
class RunMetrics:
    train_loss: list = field(default_factory=list)
    val_top1: list = field(default_factory=list)
    val_top5: list = field(default_factory=list)
    ema_val_top1: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    throughput: float = None
    seed: int = None

    @property
    def epochs(self):
        return len(self.val_top1)

    @property
    def stability(self):
        """Peak/final/gap of the EMA validation curve."""
        return stability_metrics(self.ema_val_top1)

    @property
    def peak_epoch(self):
        return self.stability.peak_epoch

    @property
    def peak_top1(self):
        return self.stability.peak

    @property
    def final_top1(self):
        return self.stability.final

    @property
    def gap(self):
        return self.stability.gap

    @property
    def best_top1(self):
        return max(self.ema_val_top1)

    @property
    def raw_stability(self):
        return stability_metrics(self.val_top1)

    def deterministic_view(self):
        """Everything except wall-clock measurements."""
        return (tuple(self.train_loss), tuple(self.val_top1), tuple(self.val_top5),
                tuple(self.ema_val_top1), tuple(self.lr))

    def summary(self):
        s, r = self.stability, self.raw_stability
        return {
            "seed": self.seed,
            "epochs": self.epochs,
            "peak_epoch": s.peak_epoch,
            "peak_top1": s.peak,
            "final_top1": s.final,
            "gap": s.gap,
            "best_top1": self.best_top1,
            "raw_peak_top1": r.peak,
            "raw_final_top1": r.final,
            "raw_gap": r.gap,
            "final_val_top5": self.val_top5[-1],
            "throughput": self.throughput,
        }


@dataclass
class TrainResult:
    metrics: RunMetrics
    params: object
    ema_params: object
    best_ema_params: object
    model_config: object
    norm_mean: np.ndarray
    norm_std: np.ndarray
    train_top1: float = None


def config_hash(doc):
    """Git blob hash of the canonical JSON encoding of ``doc``."""
    body = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def accuracy(logits, labels, k=1):
    k = min(k, logits.shape[1])
    top = np.argpartition(-logits, k - 1, axis=1)[:, :k] if k > 1 else logits.argmax(1)[:, None]
    return 100.0 * float((top == labels[:, None]).any(axis=1).mean())


def evaluate(params, config, images, labels, batch_size=256):
    """``(top1, top5, loss)`` on normalized images."""
    logits = predict_logits(params, config, images, batch_size).astype(np.float64)
    z = logits - logits.max(1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(1, keepdims=True))
    loss = float(-logp[np.arange(len(labels)), labels].mean())
    return accuracy(logits, labels, 1), accuracy(logits, labels, 5), loss


def train(model_config, train_config, train_set, val_set, seed, out_dir=None,
          dtype=np.float32, eval_batch=256, bench=True):
    """Train one seed and return a :class:`TrainResult`.

    ``train_set``/``val_set`` are :class:`~pevit.data.Dataset`; normalization
    statistics come from the training split. With ``out_dir`` the per-epoch
    CSV, run manifest and checkpoints (best EMA, final raw) are written there.
    """
    tc = train_config
    mc = replace(model_config, drop_path_rate=tc.drop_path)
    if train_set.num_classes != mc.num_classes:
        raise ConfigError(
            f"dataset has {train_set.num_classes} classes, model expects {mc.num_classes}"
        )
    if train_set.mean is None:
        train_set.fit_normalization()
    mean, std = train_set.mean, train_set.std
    x_train = train_set.normalized().astype(dtype)
    y_train = train_set.labels
    x_val = val_set.normalized(mean, std).astype(dtype)
    y_val = val_set.labels

    params, stats = build_model(mc, seed)
    if np.dtype(dtype) != params.dtype:
        params = params.astype(dtype)
    opt = AdamW(params, (tc.beta1, tc.beta2), tc.eps, tc.weight_decay)
    ema = EMA(params, tc.ema_decay)

    n = len(y_train)
    steps_per_epoch = math.ceil(n / tc.batch_size)
    total = tc.epochs * steps_per_epoch
    warmup = tc.warmup_epochs * steps_per_epoch

    out = Path(out_dir) if out_dir is not None else None
    csv_file = writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        doc = {"model": mc.to_dict(), "train": tc.to_dict(), "seed": int(seed)}
        manifest = dict(doc, config_hash=config_hash(doc), norm_mean=mean.tolist(),
                        norm_std=std.tolist(), train_size=n, val_size=len(y_val),
                        params=stats.total_params, gmacs=stats.gmacs)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        csv_file = open(out / "metrics.csv", "w", newline="")
        writer = csv.writer(csv_file, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)

    metrics = RunMetrics(seed=int(seed))
    best, best_params = -1.0, None
    step = 0
    lr = 0.0
    try:
        for epoch in range(tc.epochs):
            t0 = time.perf_counter()
            order = rng_mod.stream(seed, "data_order", epoch).permutation(n)
            mix_rng = rng_mod.stream(seed, "mixup", epoch)
            losses = []
            for start in range(0, n, tc.batch_size):
                idx = order[start:start + tc.batch_size]
                images = x_train[idx]
                if tc.augment:
                    images = augment_batch(images, seed, epoch, idx)
                mixed = mix_batch(images, y_train[idx], mix_rng, tc.mixup_alpha,
                                  tc.cutmix_alpha, tc.mix_switch_prob)
                target = mixed.soft_targets(mc.num_classes)
                lr = cosine_lr(step, total, warmup, tc.base_lr, tc.min_lr)
                logits = forward(params, mc, mixed.images, TRAIN,
                                 rng_mod.stream(seed, "droppath", step))
                loss = ag.cross_entropy(logits, target)
                value = loss.item()
                if not math.isfinite(value):
                    raise NonFiniteLossError(step, lr, grad_norm(params), value)
                loss.backward()
                opt.step(lr)
                opt.zero_grad()
                ema.update(params)
                losses.append(value)
                step += 1

            val1, val5, _ = evaluate(params, mc, x_val, y_val, eval_batch)
            ema_params = ema.as_params()
            ema1, _, _ = evaluate(ema_params, mc, x_val, y_val, eval_batch)
            seconds = time.perf_counter() - t0
            metrics.train_loss.append(float(np.mean(losses)))
            metrics.val_top1.append(val1)
            metrics.val_top5.append(val5)
            metrics.ema_val_top1.append(ema1)
            metrics.lr.append(lr)
            metrics.epoch_seconds.append(seconds)
            if ema1 > best:
                best, best_params = ema1, ema_params
                if out is not None:
                    save_checkpoint(out / "best_ema.vslm", ema_params, mc,
                                    extra={"epoch": epoch + 1, "ema_val_top1": ema1})
            if writer is not None:
                writer.writerow([epoch + 1, repr(metrics.train_loss[-1]), repr(val1), repr(val5),
                                 repr(ema1), repr(lr), f"{seconds:.3f}"])
                csv_file.flush()
            log.info("epoch %d/%d loss %.4f val %.2f ema %.2f lr %.2e (%.1fs)", epoch + 1,
                     tc.epochs, metrics.train_loss[-1], val1, ema1, lr, seconds)
    finally:
        if csv_file is not None:
            csv_file.close()

    if out is not None:
        save_checkpoint(out / "final.vslm", params, mc)
    if bench:
        from .accounting import measure_throughput

        metrics.throughput = measure_throughput(
            params, mc, min(eval_batch, 64), warmup_iters=1, timed_iters=3
        ).mean
    train_top1, _, _ = evaluate(params, mc, x_train, y_train, eval_batch)
    result = TrainResult(metrics, params, ema.as_params(), best_params, mc, mean, std, train_top1)
    if out is not None:
        (out / "summary.json").write_text(
            json.dumps(dict(metrics.summary(), train_top1=train_top1), indent=2) + "\n"
        )
    return result


def read_metrics_csv(path):
    """Load a per-epoch CSV written by :func:`train` into :class:`RunMetrics`."""
    m = RunMetrics()
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"{path}: no epochs recorded")
    for row in rows:
        m.train_loss.append(float(row["train_loss"]))
        m.val_top1.append(float(row["val_top1"]))
        m.val_top5.append(float(row["val_top5"]))
        m.ema_val_top1.append(float(row["ema_val_top1"]))
        m.lr.append(float(row["lr"]))
        m.epoch_seconds.append(float(row["epoch_seconds"]))
    return m
