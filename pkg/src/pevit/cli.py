"""Command-line interface: ``pevit <command> [--config FILE] [--key value ...]``.

Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure.
Machine-readable results go to stdout, diagnostics to stderr.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import accounting
from .config import PRESETS, ModelConfig, make_variant
from .errors import ConfigError, ContractError, DimensionError, MeasurementError
from .train import DESK, TrainConfig

OUTPUT_ROOT_ENV = "PEVIT_OUTPUT_ROOT"

_MODEL_KEYS = [f.name for f in fields(ModelConfig) if f.name not in ("variant", "drop_path_rate")]
_TRAIN_KEYS = [f.name for f in fields(TrainConfig)]

# key -> (default, description). ``None`` model defaults are taken from the preset.
DEFAULTS = {
    "preset": ("tiny", "base architecture: tiny | vit_b16"),
    **{k: (None, f"model {k.replace('_', ' ')} (default: from preset)") for k in _MODEL_KEYS},
    "variant": ("baseline", "baseline | grouped | shallow"),
    "group_size": (2, "blocks sharing one MLP (grouped)"),
    "width_ratio": (0.5, "MLP width fraction kept (shallow)"),
    **{k: (getattr(DESK, k), f"training {k.replace('_', ' ')}") for k in _TRAIN_KEYS},
    "data": ("synthetic", "synthetic | cifar"),
    "train_files": ([], "CIFAR-10 binary batches for training"),
    "val_files": ([], "CIFAR-10 binary batches for validation"),
    "synth_classes": (10, "synthetic: number of classes"),
    "synth_per_class": (200, "synthetic: training images per class"),
    "synth_val_per_class": (50, "synthetic: held-out images per class"),
    "synth_noise": (0.05, "synthetic: pixel noise std"),
    "synth_seed": (0, "synthetic: template seed (held-out split reuses templates)"),
    "output_dir": ("runs", f"output directory, relative paths resolve under ${OUTPUT_ROOT_ENV}"),
    "baseline_run": (None, "run directory to paired-t-test against after training"),
    "dtype": ("float32", "float32 | float64"),
}
DEFAULTS["seeds"] = (list(DESK.seeds), "training seeds, one run per seed")


def _coerce(key, value):
    default = DEFAULTS[key][0]
    try:
        if key in ("seeds", "train_files", "val_files"):
            if isinstance(value, str):
                value = [v for v in value.split(",") if v]
            if not isinstance(value, (list, tuple)):
                value = [value]
            return [int(v) for v in value] if key == "seeds" else [str(v) for v in value]
        if value is None:
            return None
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(value)
                return value.lower() in ("true", "1")
            return bool(value)
        if isinstance(default, int) or key in _MODEL_KEYS:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        return value
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r}") from exc


def _normalize_key(key):
    key = key.replace("-", "_")
    for prefix in ("model.", "train.", "data."):
        if key.startswith(prefix):
            key = key[len(prefix):]
    if key not in DEFAULTS:
        raise ConfigError(f"unknown configuration key {key!r}")
    return key


def parse_overrides(tokens):
    """``["--depth", "4", "--variant", "grouped"]`` -> ``{"depth": 4, ...}``."""
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        if "=" in tok:
            name, raw = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"missing value for {tok}")
            name, raw = tok[2:], tokens[i + 1]
            i += 2
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        key = _normalize_key(name)
        out[key] = _coerce(key, value)
    return out


class RunSpec:
    """Resolved configuration document: defaults < config file < overrides."""

    def __init__(self, doc):
        self.doc = doc

    @classmethod
    def load(cls, path=None, overrides=None):
        doc = {k: v[0] for k, v in DEFAULTS.items()}
        if path is not None:
            try:
                raw = json.loads(Path(path).read_text())
            except FileNotFoundError as exc:
                raise ConfigError(f"config file not found: {path}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
            if not isinstance(raw, dict):
                raise ConfigError(f"{path}: expected a JSON object")
            for k, v in raw.items():
                key = _normalize_key(k)
                doc[key] = _coerce(key, v)
        doc.update(overrides or {})
        spec = cls(doc)
        spec.model_config()
        spec.train_config()
        return spec

    def __getitem__(self, key):
        return self.doc[key]

    def model_config(self):
        if self["preset"] not in PRESETS:
            raise ConfigError(f"unknown preset {self['preset']!r}; choose from {sorted(PRESETS)}")
        base = PRESETS[self["preset"]]
        changes = {k: self[k] for k in _MODEL_KEYS if self[k] is not None}
        changes["variant"] = make_variant(self["variant"], self["group_size"], self["width_ratio"])
        changes["drop_path_rate"] = self["drop_path"]
        try:
            mc = replace(base, **changes)
        except (TypeError, ValueError, ZeroDivisionError) as exc:
            raise ConfigError(str(exc)) from exc
        mc.validate()
        return mc

    def train_config(self):
        return TrainConfig(**{k: self[k] for k in _TRAIN_KEYS})

    def output_dir(self):
        out = Path(self["output_dir"])
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out

    def dtype(self):
        if self["dtype"] not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self['dtype']!r}")
        return np.dtype(self["dtype"])

    def datasets(self):
        from .data import load_cifar_binary, synth_dataset

        if self["data"] == "synthetic":
            args = (self["synth_classes"], self["synth_per_class"])
            mc = self.model_config()
            kw = dict(image_size=mc.image_size, noise_std=self["synth_noise"],
                      seed=self["synth_seed"], channels=mc.in_channels)
            train_set = synth_dataset(*args, **kw)
            val_set = synth_dataset(self["synth_classes"], self["synth_val_per_class"],
                                    noise_seed=self["synth_seed"] + 1, **kw)
            return train_set, val_set
        if self["data"] == "cifar":
            if not self["train_files"] or not self["val_files"]:
                raise ConfigError("data=cifar needs train_files and val_files")
            return load_cifar_binary(self["train_files"]), load_cifar_binary(self["val_files"])
        raise ConfigError(f"unknown data source {self['data']!r}")


def describe_defaults():
    width = max(map(len, DEFAULTS))
    return "\n".join(f"  {k.ljust(width)}  {json.dumps(v)}  {d}" for k, (v, d) in DEFAULTS.items())


# ------------------------------------------------------------------ commands

def cmd_count(spec, args):
    rows = accounting.variant_rows(spec.model_config())
    if args.csv:
        sys.stdout.write(accounting.to_csv(rows))
    else:
        print(accounting.format_table(rows, exact=args.exact))
    return 0


def cmd_flops(spec, args):
    mc = spec.model_config()
    out = {}
    for row in accounting.variant_rows(mc):
        variant = make_variant(row["model"].replace("MLP", "").lower())
        out[row["model"]] = accounting.count_flops(mc.with_variant(variant), convention=args.convention)
    print(json.dumps({"convention": args.convention, "gmacs": out}, indent=2))
    return 0


def _seed_dir(out, seed):
    return out / f"seed_{seed}"


def _read_run_summaries(run_dir):
    run_dir = Path(run_dir)
    found = {}
    for path in sorted(run_dir.glob("seed_*/summary.json")):
        s = json.loads(path.read_text())
        found[int(s["seed"])] = s
    if not found:
        raise FileNotFoundError(f"no seed_*/summary.json under {run_dir}")
    return found


def _paired_report(a_dir, b_dir, metric):
    from .metrics import paired_t_test

    a, b = _read_run_summaries(a_dir), _read_run_summaries(b_dir)
    seeds = sorted(set(a) & set(b))
    if len(seeds) < 2:
        raise ValueError(f"need >= 2 seeds common to {a_dir} and {b_dir}, found {seeds}")
    res = paired_t_test([a[s][metric] for s in seeds], [b[s][metric] for s in seeds])
    return {
        "metric": metric, "seeds": seeds, "run": str(a_dir), "baseline": str(b_dir),
        "t": None if res.degenerate else res.t, "df": res.df,
        "p": None if res.degenerate else res.p, "degenerate": res.degenerate,
    }


def cmd_train(spec, args):
    from .metrics import mean_std
    from .train import train

    mc, tc = spec.model_config(), spec.train_config()
    train_set, val_set = spec.datasets()
    out = spec.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / "runspec.json").write_text(json.dumps(spec.doc, indent=2, sort_keys=True) + "\n")

    summaries = []
    for seed in tc.seeds:
        result = train(mc, tc, train_set, val_set, seed, _seed_dir(out, seed), spec.dtype())
        summaries.append(dict(result.metrics.summary(), train_top1=result.train_top1))

    metrics = ("peak_top1", "final_top1", "gap", "peak_epoch", "best_top1", "train_top1")
    agg = {m: mean_std([s[m] for s in summaries]) for m in metrics}
    doc = {"seeds": list(tc.seeds), "runs": summaries,
           "aggregate": {m: {"mean": mu, "std": sd} for m, (mu, sd) in agg.items()}}
    lines = [f"{m}: {mu:.2f} ± {sd:.2f}" for m, (mu, sd) in agg.items()]
    if spec["baseline_run"]:
        doc["paired_t_test"] = _paired_report(out, spec["baseline_run"], "final_top1")
        t = doc["paired_t_test"]
        lines.append("paired t-test final_top1 vs baseline: " + (
            "degenerate (zero variance of differences)" if t["degenerate"]
            else f"t={t['t']:.3f} df={t['df']} p={t['p']:.4f}"))
    (out / "summary.json").write_text(json.dumps(doc, indent=2) + "\n")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_eval(spec, args):
    from .checkpoint import load_checkpoint
    from .train import evaluate

    params, mc, _ = load_checkpoint(args.checkpoint)
    train_set, val_set = spec.datasets()
    manifest = Path(args.checkpoint).parent / "manifest.json"
    if manifest.exists():
        m = json.loads(manifest.read_text())
        mean, std = np.asarray(m["norm_mean"], np.float32), np.asarray(m["norm_std"], np.float32)
    else:
        train_set.fit_normalization()
        mean, std = train_set.mean, train_set.std
    top1, top5, loss = evaluate(params, mc, val_set.normalized(mean, std).astype(params.dtype),
                                val_set.labels)
    print(json.dumps({"checkpoint": str(args.checkpoint), "n": len(val_set),
                      "top1": top1, "top5": top5, "loss": loss}))
    return 0


GRADCHECK_MAX_DIM = 64


def cmd_gradcheck(spec, args):
    from . import gradcheck
    from .model import build_model

    mc = spec.model_config()
    if mc.embed_dim > GRADCHECK_MAX_DIM or mc.image_size > 32:
        raise ConfigError(
            f"gradcheck needs tiny dims (embed_dim <= {GRADCHECK_MAX_DIM}, image_size <= 32)"
        )
    seed = args.seed
    params, _ = build_model(mc, seed)
    params = gradcheck.perturb(params.astype(np.float64), seed)
    gen = np.random.default_rng(seed)
    images = gen.standard_normal((args.batch, mc.in_channels, mc.image_size, mc.image_size))
    labels = gen.integers(0, mc.num_classes, args.batch)

    hook = None
    if args.corrupt:
        target = args.corrupt

        def hook(name, grad):
            return grad * 1.01 if name == target else grad

    reports = gradcheck.check_model(params, mc, images, labels, samples=args.samples,
                                    seed=seed, tol=args.tol, grad_hook=hook)
    ok = True
    for r in reports:
        ok &= r.passed
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} rel_err={r.max_rel_error:.3e} "
              f"checked={r.checked}/{r.size}")
    if params.num_mlp_storages < params.depth:
        decomposition = gradcheck.shared_grad_decomposition(params, mc, images, labels)
        for name, diff in decomposition.items():
            passed = diff <= 1e-10
            ok &= passed
            print(f"{'PASS' if passed else 'FAIL'} {name} shared_vs_summed={diff:.3e}")
    failed = [r.name for r in reports if not r.passed]
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
    return 0 if ok else 3


BENCH_DIMS = dict(image_size=224, patch_size=16, in_channels=3, embed_dim=768,
                  num_heads=12, mlp_hidden=3072, num_classes=1000)


def cmd_bench(spec, args):
    from .config import Baseline, Grouped, Shallow
    from .model import build_model

    if args.iters < 3:
        raise ConfigError(f"--iters must be >= 3 to report a spread, got {args.iters}")
    if args.batch < 1:
        raise ConfigError("--batch must be positive")
    base = ModelConfig(depth=args.depth, **BENCH_DIMS)
    results = {}
    for variant in (Baseline(), Grouped(2), Shallow(0.5)):
        mc = base.with_variant(variant)
        params, _ = build_model(mc, args.seed)
        tp = accounting.measure_throughput(params, mc, args.batch, args.warmup, args.iters,
                                           args.seed)
        results[variant.label] = {"img_per_s": tp.mean, "std": tp.std}
    b = results["Baseline"]["img_per_s"]
    doc = {
        "dims": dict(BENCH_DIMS, depth=args.depth), "batch": args.batch, "iters": args.iters,
        "throughput": results,
        "ratio_shallow_baseline": results["ShallowMLP"]["img_per_s"] / b,
        "ratio_grouped_baseline": results["GroupedMLP"]["img_per_s"] / b,
        "machine_note": accounting.MACHINE_NOTE,
    }
    print(json.dumps(doc, indent=2))
    return 0


CURVE_FIELDS = (("top1", "ema_val_top1"), ("raw_top1", "val_top1"), ("loss", "train_loss"))


def merge_curves(paths):
    """Per-epoch mean/min/max across run CSVs, as CSV text."""
    from .train import read_metrics_csv

    paths = [Path(p) for p in paths]
    if not paths:
        raise FileNotFoundError("no metrics.csv files found")
    runs = [read_metrics_csv(p) for p in paths]
    lengths = {str(p): r.epochs for p, r in zip(paths, runs)}
    if len(set(lengths.values())) != 1:
        listing = ", ".join(f"{p} ({n} epochs)" for p, n in lengths.items())
        raise ValueError(f"runs have mismatched epoch counts: {listing}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["epoch"]
    for name, _ in CURVE_FIELDS:
        header += [f"mean_{name}", f"min_{name}", f"max_{name}"]
    w.writerow(header)
    for e in range(runs[0].epochs):
        row = [e + 1]
        for _, attr in CURVE_FIELDS:
            vals = [getattr(r, attr)[e] for r in runs]
            row += [repr(float(np.mean(vals))), repr(min(vals)), repr(max(vals))]
        w.writerow(row)
    return buf.getvalue()


def cmd_curves(spec, args):
    run = Path(args.run_dir)
    paths = sorted(run.glob("seed_*/metrics.csv")) or sorted(run.glob("*.csv"))
    text = merge_curves(paths)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_stats(spec, args):
    print(json.dumps(_paired_report(args.run_a, args.run_b, args.metric), indent=2))
    return 0


# ------------------------------------------------------------------ entry point

def build_parser():
    p = argparse.ArgumentParser(
        prog="pevit",
        description="Vision Transformer MLP-efficiency experiments.",
        epilog="Any configuration key may be overridden with --key value.\n"
               "Configuration keys and defaults:\n" + describe_defaults(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="JSON configuration document")
        sp.set_defaults(func=fn)
        return sp

    sp = add("count", cmd_count, "parameter / MAC table for the three variants")
    sp.add_argument("--exact", action="store_true", help="print exact integers")
    sp.add_argument("--csv", action="store_true", help="CSV instead of a text table")
    sp = add("flops", cmd_flops, "GMACs per image for the three variants")
    sp.add_argument("--convention", choices=("dense_only", "full"), default="dense_only")
    add("train", cmd_train, "train one run per seed and summarize")
    sp = add("eval", cmd_eval, "evaluate a checkpoint on the validation split")
    sp.add_argument("--checkpoint", required=True, help="checkpoint file (.vslm)")
    sp = add("gradcheck", cmd_gradcheck, "finite-difference gradient check (float64)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--batch", type=int, default=2)
    sp.add_argument("--samples", type=int, default=6, help="coordinates per large tensor")
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--corrupt", metavar="PATH", help=argparse.SUPPRESS)
    sp = add("bench", cmd_bench, "forward throughput at ViT-B width")
    sp.add_argument("--batch", type=int, default=8)
    sp.add_argument("--iters", type=int, default=5)
    sp.add_argument("--warmup", type=int, default=1)
    sp.add_argument("--depth", type=int, default=2)
    sp.add_argument("--seed", type=int, default=0)
    sp = add("curves", cmd_curves, "merge per-seed curves into mean/min/max CSV")
    sp.add_argument("run_dir")
    sp.add_argument("--out")
    sp = add("stats", cmd_stats, "paired t-test between two run directories")
    sp.add_argument("run_a")
    sp.add_argument("run_b")
    sp.add_argument("--metric", default="final_top1")
    return p


def main(argv=None):
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(message)s")
    try:
        spec = RunSpec.load(args.config, parse_overrides(rest))
        return args.func(spec, args)
    except (ConfigError, DimensionError, ContractError, MeasurementError) as exc:
        print(f"pevit {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime failure
        print(f"pevit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
