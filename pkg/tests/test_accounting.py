from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pevit.accounting import (
    count_flops,
    count_macs,
    count_params,
    efficiency_ratios,
    estimate_memory,
    format_table,
    measure_throughput,
    to_csv,
    variant_rows,
    walk_params,
)
from pevit.config import VIT_B16, Baseline, Grouped, ModelConfig, Shallow
from pevit.errors import ConfigError, MeasurementError
from pevit.model import build_model

from conftest import MICRO

VARIANTS = (Baseline(), Grouped(2), Shallow(Fraction(1, 2)))


def _dense_macs(d, t, hidden, depth, patches, patch_dim, classes):
    # independent oracle: one MAC per weight per token for every dense layer
    per_block = t * (3 * d * d) + t * (d * d) + t * (d * hidden) + t * (hidden * d)
    return patches * patch_dim * d + depth * per_block + d * classes


def test_vit_b16_params():
    expect = {Baseline: (86_567_656, 56_669_184, 12),
              Grouped: (58_233_064, 28_334_592, 6),
              Shallow: (58_237_672, 28_339_200, 12)}
    for v in VARIANTS:
        s = count_params(VIT_B16, v)
        assert (s.total_params, s.mlp_params, s.unique_mlp_blocks) == expect[type(v)]
    base = 86_567_656
    # closed-form oracle: 12 * (768*3072 + 3072 + 3072*768 + 768)
    assert 12 * (768 * 3072 + 3072 + 3072 * 768 + 768) == 56_669_184
    assert base - 6 * 4_722_432 == 58_233_064
    assert (base - 58_233_064) / base == pytest.approx(0.3273, abs=1e-4)


def test_vit_b16_flops():
    oracle = 115_605_504 + 12 * (348_585_984 + 116_195_328 + 929_562_624) + 768_000
    assert count_macs(VIT_B16) == oracle
    assert oracle == _dense_macs(768, 197, 3072, 12, 196, 768, 1000)
    assert count_flops(VIT_B16) == pytest.approx(16.8485, abs=1e-4)
    assert count_flops(VIT_B16, Grouped(2)) == count_flops(VIT_B16)
    assert count_flops(VIT_B16, Shallow(0.5)) == pytest.approx(11.2711, abs=1e-4)
    ratio = count_flops(VIT_B16, Shallow(0.5)) / count_flops(VIT_B16)
    assert ratio == pytest.approx(0.6690, abs=1e-4)
    assert count_flops(VIT_B16, convention="full") > count_flops(VIT_B16)
    with pytest.raises(ConfigError):
        count_macs(VIT_B16, "bogus")


def test_tiny_counts(tiny):
    assert [count_params(tiny, v).total_params for v in VARIANTS] == [208_074, 141_898, 142_026]
    assert count_macs(tiny) == 12_976_768 == _dense_macs(64, 65, 256, 4, 64, 48, 10)


def test_efficiency_ratios():
    stats = {type(v): count_params(VIT_B16, v) for v in VARIANTS}
    g = efficiency_ratios(stats[Grouped], 81.47)
    s = efficiency_ratios(stats[Shallow], 81.25)
    b = efficiency_ratios(stats[Baseline], 81.05)
    assert g.acc_per_mparam == pytest.approx(1.40, abs=0.01)
    assert 1.39 - 0.01 <= s.acc_per_mparam <= 1.40 + 0.01
    assert b.acc_per_mparam == pytest.approx(0.94, abs=0.01)
    assert s.acc_per_gflop == pytest.approx(7.20, abs=0.05)
    assert b.acc_per_gflop == pytest.approx(4.80, abs=0.05)
    unit = count_params(VIT_B16)
    unit.total_params = 100_000_000
    assert efficiency_ratios(unit, 100).acc_per_mparam == 1.0
    with pytest.raises(ValueError):
        efficiency_ratios(unit, 0)


def test_memory_estimate():
    base = estimate_memory(VIT_B16, 8)
    grouped = estimate_memory(VIT_B16.with_variant(Grouped(2)), 8)
    assert grouped.params / base.params == pytest.approx(58_233_064 / 86_567_656, rel=1e-12)
    assert round(grouped.params / base.params, 4) == 0.6727
    no_ema = estimate_memory(VIT_B16, 8, ema=False)
    assert base.total - no_ema.total == 86_567_656 * 4
    assert estimate_memory(VIT_B16, 0).activations == 0
    assert base.optimizer == 2 * base.params


@pytest.mark.parametrize("cfg", [MICRO, ModelConfig(image_size=32, patch_size=4, embed_dim=64,
                                                     depth=4, num_heads=4, mlp_hidden=256,
                                                     num_classes=10)])
def test_shallow_saving_formula(cfg):
    L, d, H = cfg.depth, cfg.embed_dim, cfg.mlp_hidden
    saving = count_params(cfg).mlp_params - count_params(cfg, Shallow(0.5)).mlp_params
    assert saving == L * (d * H + H // 2)


@given(d_heads=st.sampled_from([(8, 2), (12, 3), (16, 4)]), depth=st.sampled_from([2, 4, 6]),
       mult=st.integers(1, 4), patch=st.sampled_from([2, 4]), classes=st.integers(1, 5))
def test_closed_form_matches_walk(d_heads, depth, mult, patch, classes):
    d, heads = d_heads
    cfg = ModelConfig(image_size=8, patch_size=patch, embed_dim=d, depth=depth, num_heads=heads,
                      mlp_hidden=2 * d * mult, num_classes=classes)
    for v in VARIANTS:
        c = cfg.with_variant(v)
        params, stats = build_model(c, 0)
        walked = walk_params(params)
        assert walked.total_params == stats.total_params
        assert walked.mlp_params == stats.mlp_params
        assert walked.referenced_params == stats.referenced_params
        assert walked.unique_mlp_blocks == stats.unique_mlp_blocks
        assert stats.unique_params <= stats.referenced_params


@pytest.mark.parametrize("variant", VARIANTS, ids=lambda v: v.label)
def test_closed_form_matches_walk_at_vit_b16(variant):
    params, stats = build_model(VIT_B16.with_variant(variant), 0)
    walked = walk_params(params)
    assert walked.total_params == stats.total_params
    assert walked.mlp_params == stats.mlp_params
    assert walked.unique_mlp_blocks == stats.unique_mlp_blocks


def test_report_formats():
    rows = variant_rows(VIT_B16)
    table = format_table(rows).splitlines()
    assert table[0].split() == ["Model", "Params", "MLP", "Unique", "GFLOPs", "Expansion"]
    assert table[2].split() == ["GroupedMLP", "58.2M", "28.3M", "6", "16.8", "4x"]
    assert table[3].split() == ["ShallowMLP", "58.2M", "28.3M", "12", "11.3", "2x"]
    lines = to_csv(rows).splitlines()
    assert lines[0] == "model,params,unique_mlp,mlp_params,gmacs,expansion"
    assert lines[1].startswith("Baseline,86567656,12,56669184,16.848")


def test_throughput_measurement(tiny):
    params, _ = build_model(tiny, 0)
    tp = measure_throughput(params, tiny, 4, warmup_iters=1, timed_iters=3)
    assert tp.mean > 0 and len(tp.samples) == 3 and tp.std >= 0
    with pytest.raises(MeasurementError):
        measure_throughput(params, tiny, 4, timed_iters=2)
    for batch in (1, 64):
        assert measure_throughput(params, tiny, batch, 0, 3).mean > 0


def test_throughput_self_consistency(tiny):
    params, _ = build_model(tiny, 0)
    a = measure_throughput(params, tiny, 8, 1, 5)
    b = measure_throughput(params, tiny, 8, 1, 5)
    # same model twice: ratio stays within a generous noise band
    assert 0.5 < a.mean / b.mean < 2.0
    assert np.isfinite(a.cv)
