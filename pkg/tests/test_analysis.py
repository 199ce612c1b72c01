import json

import pytest
from hypothesis import given, settings, strategies as st

from conftest import tiny_arch
from dynet.analysis import (
    FLOPS_CONVENTION,
    compare_variants,
    cost_report,
    count_params,
    estimate_flops,
    format_reports,
    reduction,
    reported_reductions,
    write_report,
)
from dynet.arch import VariantConfig, build_model, switch_variant
from oracles import PROMPTIR_REDUCTION_GFLOPS, PROMPTIR_REDUCTION_PARAMS, torch_flops

import torch


@pytest.fixture(scope="module")
def full():
    return build_model("L")


def test_ratio_at_224(full):
    fl = estimate_flops(full)
    switch_variant(full, "S")
    fs = estimate_flops(full)
    switch_variant(full, "L")
    assert 0.667 <= fs / fl <= 0.707


def test_unique_equal_unrolled_differs(full):
    l_u, l_r = count_params(full)
    switch_variant(full, "S")
    s_u, s_r = count_params(full)
    switch_variant(full, "L")
    assert l_u == s_u
    assert l_r > s_r > s_u


def test_flat_schedule_unrolled_equals_unique(arch8):
    m = build_model(VariantConfig("one", (1, 1, 1, 1), 8), arch=arch8)
    u, r = count_params(m)
    assert u == r


@pytest.mark.parametrize("name", ["L", "S"])
def test_matches_torch_flop_counter(arch8, name):
    m = build_model(name, arch=arch8)
    x = torch.rand(1, 3, 32, 48)
    assert estimate_flops(m, 32, 48) == torch_flops(m, x)


def test_matches_torch_flop_counter_default_width():
    m = build_model("S")
    assert estimate_flops(m, 32, 32) == torch_flops(m, torch.rand(1, 3, 32, 32))


def test_spatial_scaling_is_4x(full):
    _, big = estimate_flops(full, 224, 224, breakdown=True)
    _, small = estimate_flops(full, 112, 112, breakdown=True)
    a = full.arch
    for name in big:
        if name.startswith("prompts."):
            i = int(name.split(".")[1])
            # pooled linear and component mixing do not depend on the input size
            fixed = 2 * (a.base_channels * 2**i * a.prompt_len
                         + a.prompt_len * a.prompt_dims[i] * a.prompt_sizes[i] ** 2)
            assert big[name] - fixed == 4 * (small[name] - fixed), name
        else:
            assert big[name] == 4 * small[name], name


def test_doubling_reuse_doubles_block_flops(arch8):
    m = build_model(VariantConfig("a", (1, 1, 1, 1), 8), arch=arch8)
    _, one = estimate_flops(m, 64, 64, breakdown=True)
    switch_variant(m, VariantConfig("b", (2, 2, 2, 2), 8))
    _, two = estimate_flops(m, 64, 64, breakdown=True)
    for name in one:
        looped = name.startswith(("encoders", "decoders", "latent"))
        assert two[name] == (2 * one[name] if looped else one[name]), name


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=4, max_size=4), st.integers(0, 3))
def test_flops_strictly_monotone(freqs, level):
    m = build_model(VariantConfig("a", freqs, 8), arch=tiny_arch())
    base = estimate_flops(m, 32, 32)
    bumped = list(freqs)
    bumped[level] += 1
    switch_variant(m, VariantConfig("b", bumped, 8))
    assert estimate_flops(m, 32, 32) > base
    assert count_params(m)[0] == count_params(build_model(VariantConfig("a", freqs, 8),
                                                         arch=tiny_arch()))[0]


def test_flops_rejects_bad_size(arch8):
    with pytest.raises(ValueError):
        estimate_flops(build_model("L", arch=arch8), 30, 32)


def test_reported_reductions():
    r = reported_reductions()
    assert r["params_pct"] == pytest.approx(PROMPTIR_REDUCTION_PARAMS, abs=1e-9)
    assert r["gflops_pct"] == pytest.approx(PROMPTIR_REDUCTION_GFLOPS, abs=1e-9)
    assert abs(r["params_pct"] - 56.76) < 0.1 and abs(r["gflops_pct"] - 31.35) < 0.1
    assert reduction(100, 25) == 75.0


def test_reports_and_restore(arch8, tmp_path):
    m = build_model("S", arch=arch8)
    reps = compare_variants(m, ["L", "S"], 64, 64)
    assert m.variant.name == "S"
    assert [r.variant for r in reps] == ["L", "S"]
    assert reps[0].unique_params == reps[1].unique_params
    assert sum(reps[0].levels.values()) == reps[0].flops
    table = format_reports(reps)
    assert FLOPS_CONVENTION in table and "ratio" in table
    write_report(tmp_path / "r.json", reps)
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["reports"][1]["reuse_freqs"] == [2, 3, 3, 4]
    assert cost_report(m, 64, 64).flops == reps[1].flops
