import numpy as np
import pytest
from hypothesis import given, strategies as st

from hifind.components import connected_components
from hifind.detect import (
    BaselineConfig,
    baseline_smooth_clip,
    binarize,
    boxcar_smooth,
    pad_for_model,
    robust_sigma,
    run_inference,
    size_filter,
    sliding_window_infer,
)
from hifind.synth import SourceParams, inject_source
from hifind.unetlk import UnetLKConfig


def identity(block):
    return block.astype(np.float64)


@pytest.mark.parametrize(
    "shape,patch,stride",
    [((37, 11, 13), (16, 8, 8), (8, 4, 4)), ((64, 16, 16), (32, 16, 16), None), ((50, 9, 20), (24, 8, 8), (7, 3, 5)),
     ((8, 8, 8), (8, 8, 8), None), ((129, 17, 31), (64, 16, 16), (32, 8, 8)), ((5, 3, 2), (8, 8, 8), None)],
)
def test_identity_reconstruction(shape, patch, stride):
    cube = np.random.default_rng(sum(shape)).normal(size=shape).astype(np.float32)
    prob = sliding_window_infer(identity, cube, patch, stride)
    assert prob.values.shape == shape
    assert np.abs(prob.values - cube).max() <= 1e-6
    assert prob.coverage_count.min() >= 1


@given(
    shape=st.tuples(st.integers(1, 40), st.integers(1, 20), st.integers(1, 20)),
    seed=st.integers(0, 1000),
)
def test_identity_reconstruction_property(shape, seed):
    cube = np.random.default_rng(seed).random(shape).astype(np.float32)
    prob = sliding_window_infer(identity, cube, (16, 8, 8))
    np.testing.assert_allclose(prob.values, cube, atol=1e-6)


def test_coverage_counts_overlaps():
    prob = sliding_window_infer(identity, np.zeros((32, 8, 8), np.float32), (16, 8, 8), (8, 8, 8))
    assert prob.coverage_count[:, 0, 0].tolist() == [1] * 8 + [2] * 16 + [1] * 8


def test_pad_for_model():
    padded, valid = pad_for_model(np.ones((10, 9, 8)), 8)
    assert padded.shape == (16, 16, 8) and valid == (10, 9, 8) and padded.sum() == 720


def test_bad_model_output_shape():
    with pytest.raises(ValueError):
        sliding_window_infer(lambda b: b[:-1], np.zeros((16, 8, 8)), (16, 8, 8))


def test_binarize_strict():
    assert binarize(np.array([0.5, 0.5000001, 0.9, 0.1])).tolist() == [0, 1, 1, 0]


def _blob(n_voxels):
    mask = np.zeros((40, 40, 40), np.uint8)
    flat = mask.reshape(-1)
    # a straight run along the last axis wrapping row by row stays 26-connected
    idx = np.arange(n_voxels)
    mask[idx // 1600 % 40 + 2, idx // 40 % 40, idx % 40] = 1
    assert flat.sum() == n_voxels
    return mask


@pytest.mark.parametrize("n,kept", [(299, False), (300, True), (301, True)])
def test_size_filter_boundary(n, kept):
    labels, records = connected_components(_blob(n), 26)
    assert len(records) == 1 and records[0].n_voxels == n
    keep, out = size_filter(records, labels, 300)
    assert bool(keep) == kept and bool(out.any()) == kept


def test_baseline_zero_cube():
    labels, records = baseline_smooth_clip(np.zeros((32, 16, 16), np.float32))
    assert records == [] and not labels.any()


def test_baseline_pure_noise_has_no_detections():
    cube = np.random.default_rng(0).normal(0, 3, (128, 16, 16)).astype(np.float32)
    assert baseline_smooth_clip(cube)[1] == []


def _source_cube(extent_xy=8, snr=10.0, seed=1, shape=(256, 24, 24)):
    rng = np.random.default_rng(seed)
    cube = rng.normal(0, 3.0, shape)
    # scale so the 0.5 sigma contour spans the requested extent
    level = 0.5 / snr
    half_f, half_s = 50, extent_xy / 2
    scale = (half_f / np.sqrt(-2 * np.log(level)), half_s / np.sqrt(-2 * np.log(level)),
             half_s / np.sqrt(-2 * np.log(level)))
    center = (shape[0] / 2, shape[1] / 2 - 0.5, shape[2] / 2 - 0.5)
    mask = np.zeros(shape, np.uint8)
    inject_source(cube, mask, SourceParams(center, scale, snr * 3.0, "gaussian", 1.5))
    return cube.astype(np.float32), mask


def test_baseline_detects_snr10_source_as_one_component():
    cube, _ = _source_cube()
    labels, records = baseline_smooth_clip(cube)
    assert len(records) == 1


def test_baseline_extent_filter_rejects_wide_source():
    cube, _ = _source_cube(extent_xy=60, snr=10, shape=(256, 64, 64))
    _, records = baseline_smooth_clip(cube)
    assert records == []
    _, records = baseline_smooth_clip(cube, BaselineConfig(max_size_xy=100))
    assert len(records) == 1


def test_baseline_only_positive():
    cube, _ = _source_cube()
    assert baseline_smooth_clip(-cube)[1] == []


def test_baseline_union_modes_agree_on_isolated_source():
    cube, _ = _source_cube()
    a, _ = baseline_smooth_clip(cube)
    b, _ = baseline_smooth_clip(cube, BaselineConfig(union_before_linking=False))
    assert (a > 0).sum() >= (b > 0).sum() > 0


def test_boxcar_and_sigma():
    x = np.zeros((9, 5, 5))
    x[4, 2, 2] = 9.0
    sm = boxcar_smooth(x, 3, 3)
    assert sm.sum() == pytest.approx(9.0, rel=1e-6) and sm[4, 2, 2] == pytest.approx(9.0 / 27)
    np.testing.assert_array_equal(boxcar_smooth(x, 0, 0), x)
    noise = np.random.default_rng(0).normal(0, 2.0, 200_000)
    assert robust_sigma(noise) == pytest.approx(2.0, rel=0.02)


def test_baseline_config_validation():
    with pytest.raises(ValueError):
        BaselineConfig(threshold_sigma=0)
    with pytest.raises(ValueError):
        BaselineConfig(kernels_xy=())


class _ThresholdModel:
    """Stand-in network: probability 1 wherever the normalised input is bright."""

    def __init__(self, rebin):
        self.config = UnetLKConfig(base_width=1, patch_shape=(32, 16, 16), rebin=rebin)

    def predict(self, block):
        return (block > 0.5).astype(np.float32)


@pytest.mark.parametrize("rebin", [False, True])
def test_run_inference_chain(rebin):
    cube = np.zeros((256, 20, 20), np.float32)
    cube[40:140, 4:12, 5:13] = 20.0  # 6400 voxels, kept
    cube[200:203, 15:17, 15:17] = 20.0  # 12 voxels, removed by the size filter
    res = run_inference(_ThresholdModel(rebin), cube)
    assert res.probability.shape == cube.shape and res.mask.shape == cube.shape
    assert len(res.records) == 1
    f0, f1 = res.records[0].bbox[0]
    assert abs(f0 - 40) <= 4 and abs(f1 - 139) <= 4
    assert res.records[0].bbox[1:] == ((4, 11), (5, 12))
    assert res.records[0].peak == 20.0
