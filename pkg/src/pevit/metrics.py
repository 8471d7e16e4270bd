"""Stability metrics and cross-seed statistics."""

import math
import statistics
from typing import NamedTuple

from scipy import stats


class Stability(NamedTuple):
    peak_epoch: int  # 1-indexed
    peak: float
    final: float
    gap: float


def stability_metrics(curve):
    """Peak, final value and peak-to-final gap of a validation curve.

    Ties for the peak resolve to the earliest epoch.
    """
    curve = list(curve)
    if not curve:
        raise ValueError("empty curve")
    peak = max(curve)
    return Stability(curve.index(peak) + 1, peak, curve[-1], peak - curve[-1])


class TTest(NamedTuple):
    t: float
    df: int
    p: float
    degenerate: bool


def paired_t_test(a, b):
    """Two-sided paired t-test on ``a - b``.

    When the differences have zero variance the statistic is undefined;
    ``degenerate`` is set and ``t``/``p`` are NaN.
    """
    a, b = list(a), list(b)
    if len(a) != len(b):
        raise ValueError(f"paired samples differ in length: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = [x - y for x, y in zip(a, b)]
    sd = statistics.stdev(d)
    if sd == 0:
        return TTest(math.nan, n - 1, math.nan, True)
    t = statistics.fmean(d) / (sd / math.sqrt(n))
    p = 2.0 * stats.t.sf(abs(t), n - 1)
    return TTest(t, n - 1, float(p), False)


def mean_std(values):
    values = list(values)
    if not values:
        raise ValueError("no values")
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


def aggregate_seeds(runs, fields=("peak_top1", "final_top1", "gap", "peak_epoch", "best_top1")):
    """``{metric: (mean, std)}`` across runs, std with the n-1 denominator."""
    if not runs:
        raise ValueError("no runs to aggregate")
    out = {}
    for name in fields:
        vals = [r[name] if isinstance(r, dict) else getattr(r, name) for r in runs]
        out[name] = mean_std(vals)
    return out
