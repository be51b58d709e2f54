import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hifind.preproc import (
    AugmentConfig,
    NoSourcesWarning,
    Patch,
    RebinSizeError,
    add_gaussian_noise,
    augment,
    axis_offsets,
    clip_normalize,
    crop_patches,
    cutmix_degrade,
    extract_patch,
    prepare_patch,
    random_flip,
    raw_patch_length,
    rebin_freq,
    rebin_mask,
    rebinned_length,
    sample_training_patches,
    unrebin_freq,
)
from oracles import rebin_column


def test_clip_normalize_window():
    x = np.array([-100.0, -15.0, 10.0, 35.0, 99.0])
    np.testing.assert_allclose(clip_normalize(x), [0.0, 0.0, 0.5, 1.0, 1.0])


@given(n=st.integers(6, 4096))
def test_rebinned_length_formula(n):
    assert rebinned_length(n) == (n - 6) // 4 + 1
    assert raw_patch_length(rebinned_length(n)) <= n < raw_patch_length(rebinned_length(n)) + 4


def test_rebin_too_short():
    with pytest.raises(RebinSizeError):
        rebinned_length(5)
    with pytest.raises(RebinSizeError):
        rebin_freq(np.zeros((5, 2, 2)))


def test_rebin_matches_window_means(rng):
    cube = rng.normal(0, 3, (203, 4, 5)).astype(np.float32)
    out = rebin_freq(cube)
    for r in range(4):
        for d in range(5):
            np.testing.assert_allclose(out[:, r, d], rebin_column(cube[:, r, d]), atol=1e-6)


def test_rebin_mask_any_hit():
    m = np.zeros((14, 1, 1), np.uint8)
    m[5] = 1
    # channel 5 lies in windows 0 (0..5) and 1 (4..9)
    assert rebin_mask(m)[:, 0, 0].tolist() == [1, 1, 0]


def test_unrebin_nearest_window():
    x = np.arange(3, dtype=float)[:, None, None]
    up = unrebin_freq(x, 14)[:, 0, 0]
    assert up.shape == (14,)
    assert up[0] == 0 and up[6] == 1 and up[13] == 2


@given(
    n=st.integers(1, 60),
    p=st.integers(1, 20),
    s=st.integers(1, 20),
)
def test_axis_offsets_cover_every_index(n, p, s):
    if s > p:
        with pytest.raises(ValueError):
            axis_offsets(n, p, s)
        return
    offs = axis_offsets(n, p, s)
    covered = set()
    for o in offs:
        covered.update(range(o, min(o + p, n)))
    assert covered == set(range(n))
    assert offs == sorted(set(offs)) and offs[0] == 0


def test_crop_patches_default_half_stride():
    offs = crop_patches((64, 16, 16), (32, 16, 16))
    assert offs == [(0, 0, 0), (16, 0, 0), (32, 0, 0)]


def test_extract_patch_pads_short_axes():
    vol = np.ones((5, 3, 3))
    block, valid = extract_patch(vol, (0, 0, 0), (8, 4, 4))
    assert valid == (5, 3, 3) and block.shape == (8, 4, 4)
    assert block[:5, :3, :3].all() and block.sum() == 45


def test_flip_consistent_between_data_and_label(rng):
    data = rng.normal(size=(6, 4, 4)).astype(np.float32)
    label = (data > 0).astype(np.uint8)
    p = random_flip(Patch(data, label, (0, 0, 0), data.shape), rng, decisions=[True, False, True])
    assert np.array_equal(p.data, data[::-1, :, ::-1])
    assert np.array_equal(p.label, (p.data > 0).astype(np.uint8))


def test_noise_statistics_and_identity(rng):
    data = np.zeros((64, 32, 32), np.float32)
    p = add_gaussian_noise(Patch(data, np.zeros_like(data, np.uint8), (0, 0, 0), data.shape), rng, (3.0, 3.0))
    assert abs(p.data.std() - 3.0) < 0.05 and abs(p.data.mean()) < 0.05
    q = add_gaussian_noise(Patch(data, np.zeros_like(data, np.uint8), (0, 0, 0), data.shape), rng, (0.0, 0.0))
    assert np.array_equal(q.data, data)


def test_cutmix_scales_toward_background():
    vol = np.full((10, 10, 10), 2.0, np.float32)
    mask = np.zeros(vol.shape, np.uint8)
    mask[3:6, 3:6, 3:6] = 1
    vol[mask == 1] = 12.0
    out = cutmix_degrade(vol, mask, np.random.default_rng(0), alpha=0.5)
    np.testing.assert_allclose(out[mask == 1], 7.0)
    assert np.array_equal(out[mask == 0], vol[mask == 0])


def test_cutmix_without_sources_is_copy(rng):
    vol = rng.normal(size=(4, 4, 4))
    out = cutmix_degrade(vol, np.zeros(vol.shape, np.uint8), rng)
    assert np.array_equal(out, vol) and out is not vol


def test_augment_labels_stay_binary_and_in_range(rng):
    data = rng.normal(0, 3, (26, 8, 8)).astype(np.float32)
    label = np.zeros(data.shape, np.uint8)
    label[5:15, 2:5, 2:5] = 1
    p = augment(Patch(data, label, (0, 0, 0), data.shape), rng, AugmentConfig(cutmix_prob=1.0), rebin=True)
    assert p.data.shape == (6, 8, 8) and p.data.min() >= 0 and p.data.max() <= 1
    assert set(np.unique(p.label)) <= {0, 1}


def test_prepare_patch_rebin():
    data = np.zeros((10, 2, 2), np.float32)
    p = prepare_patch(Patch(data, data.astype(np.uint8), (8, 0, 0), data.shape), rebin=True)
    assert p.data.shape == (2, 2, 2) and p.offset == (2, 0, 0)
    np.testing.assert_allclose(p.data, 0.3)


def _cube_with_source():
    cube = np.zeros((256, 24, 24), np.float32)
    mask = np.zeros(cube.shape, np.uint8)
    mask[100:180, 8:14, 8:14] = 1
    return cube, mask


def test_balanced_sampling_positive_coverage(rng):
    cube, mask = _cube_with_source()
    patches = sample_training_patches(cube, mask, rng, 8, (64, 16, 16))
    assert len(patches) == 8
    total = mask.sum()
    for p in patches[:4]:
        # each positive patch holds at least half of the source (or as much as fits)
        assert p.label.sum() >= min(0.5 * total, 64 * 36 * 0.5)


def test_sampling_odd_count_rejected(rng):
    cube, mask = _cube_with_source()
    with pytest.raises(ValueError):
        sample_training_patches(cube, mask, rng, 3)


def test_sampling_without_sources_warns(rng):
    cube = np.zeros((64, 16, 16), np.float32)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        patches = sample_training_patches(cube, np.zeros(cube.shape, np.uint8), rng, 4, (32, 16, 16))
    assert any(issubclass(x.category, NoSourcesWarning) for x in w)
    assert len(patches) == 4 and not any(p.label.any() for p in patches)


def test_augment_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(flip_prob=1.5)
    with pytest.raises(ValueError):
        AugmentConfig(noise_sigma_range=(4.0, 3.0))
