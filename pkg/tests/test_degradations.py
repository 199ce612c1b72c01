import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynet.degradations import (
    CorruptionRecipe,
    add_gaussian_noise,
    add_uniform_noise,
    compose_pretrain_sample,
    jpeg_artifacts,
    noisy_pair,
    random_mask,
)
from dynet.evaluation import psnr
from oracles import PSNR_SIGMA_50

TILE = 16 * 16


def test_gaussian_sigma_zero_identity(astronaut):
    assert np.array_equal(add_gaussian_noise(astronaut, 0), astronaut)


def test_gaussian_negative_sigma():
    with pytest.raises(ValueError):
        add_gaussian_noise(np.zeros((4, 4)), -1)


def test_gaussian_noise_std():
    img = np.full((256, 256), 128.0)
    out = add_gaussian_noise(img, 25, rng=0, clip=False)
    assert abs((out - img).std() - 25) < 0.5


def test_gaussian_sigma50_psnr():
    img = np.full((256, 256, 3), 128.0)
    out = add_gaussian_noise(img, 50, rng=1)
    assert abs(psnr(img, out) - PSNR_SIGMA_50) < 0.3


def test_noise_clipped():
    out = add_gaussian_noise(np.full((64, 64), 250.0), 50, rng=0)
    assert out.min() >= 0 and out.max() <= 255
    out = add_uniform_noise(np.full((64, 64), 5.0), 40, rng=0)
    assert out.min() >= 0 and out.max() <= 255


def test_uniform_noise_bounds():
    img = np.full((128, 128), 128.0)
    d = add_uniform_noise(img, 20, rng=0, clip=False) - img
    assert d.min() >= -20 and d.max() <= 20 and d.std() > 10


def test_jpeg(astronaut):
    patch = astronaut[100:228, 100:228]
    q100, q90, q10 = (jpeg_artifacts(patch, q) for q in (100, 90, 10))
    assert q100.shape == patch.shape
    assert psnr(patch, q100) > 40
    assert psnr(patch, q10) < psnr(patch, q90)
    for bad in (0, 101):
        with pytest.raises(ValueError):
            jpeg_artifacts(patch, bad)


def test_mask_trivial_cases():
    img = np.full((128, 128, 3), 9.0)
    out, mask = random_mask(img, 0.0, 16, rng=0)
    assert np.array_equal(out, img) and not mask.any()
    out, mask = random_mask(img, 1.0, 16, rng=0)
    assert mask.all() and not out.any()


def test_mask_unit_too_large():
    with pytest.raises(ValueError):
        random_mask(np.zeros((32, 32)), 0.3, 64)
    with pytest.raises(ValueError):
        random_mask(np.zeros((32, 32)), 1.5, 8)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1), st.sampled_from([4, 8, 16, 32]), st.integers(0, 2**31))
def test_mask_count_within_one_tile(fraction, unit, seed):
    img = np.ones((128, 128))
    out, mask = random_mask(img, fraction, unit, rng=seed)
    assert abs(mask.sum() - fraction * 128 * 128) <= unit * unit
    assert np.all(out[mask] == 0) and np.all(out[~mask] == 1)


def test_mask_30_percent():
    _, mask = random_mask(np.ones((128, 128, 3)), 0.3, 16, rng=3)
    assert abs(mask.sum() - 0.3 * 128**2) <= TILE


def test_recipe_validation():
    with pytest.raises(ValueError):
        CorruptionRecipe(degrade_fraction=0.8, mask_fraction=0.3)
    with pytest.raises(ValueError):
        CorruptionRecipe(menu=("blur",))
    r = CorruptionRecipe(seed=4)
    assert CorruptionRecipe.from_dict(r.to_dict()) == r


def test_no_corruption_recipe(astronaut):
    s = compose_pretrain_sample(astronaut, CorruptionRecipe(degrade_fraction=0, mask_fraction=0), 0)
    assert np.array_equal(s.input, s.target)
    assert s.input.shape == (128, 128, 3)


def test_sample_is_deterministic(astronaut):
    a = compose_pretrain_sample(astronaut, rng=7)
    b = compose_pretrain_sample(astronaut, rng=7)
    assert np.array_equal(a.input, b.input) and np.array_equal(a.mask, b.mask)
    assert a.degradation == b.degradation and a.level == b.level
    c = compose_pretrain_sample(astronaut, CorruptionRecipe(seed=7))
    d = compose_pretrain_sample(astronaut, CorruptionRecipe(seed=7))
    assert np.array_equal(c.input, d.input)


def test_sample_targets_are_clean_crops(astronaut):
    s = compose_pretrain_sample(astronaut, rng=2)
    y, x = s.extra["crop"]
    assert np.array_equal(s.target, astronaut[y:y + 128, x:x + 128])
    inp, target, mask = s
    untouched = ~(s.mask | s.region)
    assert np.array_equal(inp[untouched], target[untouched])
    assert np.all(inp[mask] == 0)


def test_small_patch_rejected():
    with pytest.raises(ValueError):
        compose_pretrain_sample(np.zeros((64, 64, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_budget_and_disjointness(seed):
    img = np.random.default_rng(seed).uniform(0, 255, (160, 176, 3))
    s = compose_pretrain_sample(img, rng=seed)
    assert not (s.mask & s.region).any()
    frac = (s.mask | s.region).sum()
    assert abs(frac - 0.8 * 128 * 128) <= TILE
    assert abs(s.region.sum() - 0.5 * 128 * 128) <= TILE
    if s.degradation in ("gaussian", "uniform"):
        assert (s.input[s.region] != s.target[s.region]).mean() > 0.5


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 0.6), st.floats(0, 0.4), st.integers(0, 1000))
def test_budget_any_recipe(df, mf, seed):
    r = CorruptionRecipe(degrade_fraction=df, mask_fraction=mf, crop_size=64, mask_unit=8)
    s = compose_pretrain_sample(np.full((64, 64, 3), 100.0), r, seed)
    assert not (s.mask & s.region).any()
    assert abs((s.mask | s.region).sum() - (df + mf) * 64 * 64) <= 2 * 8 * 8


def test_noisy_pair(camera_rgb):
    noisy, clean = noisy_pair(camera_rgb, 25, rng=0)
    assert np.array_equal(clean, camera_rgb)
    assert noisy.shape == clean.shape and not np.array_equal(noisy, clean)
