"""Sliding-window inference, post-processing and the smooth-and-clip baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d

from .components import component_records, connected_components
from .preproc import clip_normalize, crop_patches, rebin_freq, unrebin_freq

MIN_VOXELS = 300
MAD_TO_SIGMA = 1.4826


@dataclass
class ProbabilityCube:
    values: np.ndarray
    coverage_count: np.ndarray

    @property
    def shape(self):
        return self.values.shape


@dataclass
class BaselineConfig:
    threshold_sigma: float = 5.0
    kernels_xy: tuple[int, ...] = (0, 3, 6)
    kernels_z: tuple[int, ...] = (0, 3, 7, 15)
    min_size_xy: int = 5
    min_size_z: int = 5
    max_size_xy: int = 50
    connectivity: int = 26
    union_before_linking: bool = True

    def __post_init__(self):
        if self.threshold_sigma <= 0:
            raise ValueError("threshold must be positive")
        if not self.kernels_xy or not self.kernels_z:
            raise ValueError("kernel lists must be non-empty")
        self.kernels_xy = tuple(int(k) for k in self.kernels_xy)
        self.kernels_z = tuple(int(k) for k in self.kernels_z)


def pad_for_model(cube, multiple=8, min_shape=None, fill=0.0):
    """Zero-pad every axis up to a multiple of ``multiple`` (and at least ``min_shape``)."""
    cube = np.asarray(cube)
    min_shape = min_shape or (1,) * cube.ndim
    target = tuple(max(-(-n // multiple) * multiple, m) for n, m in zip(cube.shape, min_shape))
    if target == cube.shape:
        return cube, cube.shape
    out = np.full(target, fill, dtype=cube.dtype)
    out[tuple(slice(0, n) for n in cube.shape)] = cube
    return out, cube.shape


def crop_to_valid(volume, valid_extent):
    return volume[tuple(slice(0, n) for n in valid_extent)]


def _predictor(model):
    return model.predict if hasattr(model, "predict") else model


def sliding_window_infer(model, cube, patch_shape, stride=None, multiple=8, pad_value=0.0, offsets=None):
    """Average overlapping patch predictions into a probability cube.

    ``model`` is anything with ``predict(block)`` or a plain callable mapping
    an (F, R, D) block to an array of the same shape. The cube is padded to
    the model's divisibility; predictions on padding are discarded.
    """
    cube = np.asarray(getattr(cube, "data", cube))
    padded, valid = pad_for_model(cube, multiple, patch_shape, pad_value)
    if any(p > n for p, n in zip(patch_shape, padded.shape)):
        raise ValueError(f"patch {patch_shape} larger than padded cube {padded.shape}")
    if offsets is None:
        offsets = crop_patches(padded.shape, patch_shape, stride)
    predict = _predictor(model)
    total = np.zeros(padded.shape, dtype=np.float64)
    count = np.zeros(padded.shape, dtype=np.int32)
    for off in offsets:
        window = tuple(slice(o, o + p) for o, p in zip(off, patch_shape))
        pred = np.asarray(predict(padded[window]))
        if pred.shape != tuple(patch_shape):
            raise ValueError(f"model returned {pred.shape} for a {tuple(patch_shape)} patch")
        total[window] += pred
        count[window] += 1
    total = crop_to_valid(total, valid)
    count = crop_to_valid(count, valid)
    if (count == 0).any():
        raise ValueError("offsets leave voxels uncovered")
    return ProbabilityCube((total / count).astype(np.float32), count)


def binarize(prob, threshold=0.5):
    """1 where probability is strictly above ``threshold``."""
    values = getattr(prob, "values", prob)
    return (np.asarray(values) > threshold).astype(np.uint8)


def size_filter(records, labels, min_voxels=MIN_VOXELS):
    """Drop components with fewer than ``min_voxels`` voxels (exactly ``min_voxels`` survives)."""
    labels = np.asarray(getattr(labels, "data", labels))
    keep = [r for r in records if r.n_voxels >= min_voxels]
    dropped = [r.id for r in records if r.n_voxels < min_voxels]
    if not dropped:
        return keep, labels
    lut = np.arange(max(int(labels.max()), max(dropped)) + 1, dtype=labels.dtype)
    lut[dropped] = 0
    return keep, lut[labels]


# -- smooth-and-clip baseline ----------------------------------------------------


def boxcar_smooth(cube, width_xy, width_z):
    """Uniform smoothing; a width of 0 (or 1) leaves that axis untouched."""
    out = np.asarray(cube, dtype=np.float32)
    if width_z > 1:
        out = uniform_filter1d(out, width_z, axis=0, mode="nearest")
    if width_xy > 1:
        out = uniform_filter1d(out, width_xy, axis=1, mode="nearest")
        out = uniform_filter1d(out, width_xy, axis=2, mode="nearest")
    return out


def robust_sigma(values):
    values = np.asarray(values, dtype=np.float64).ravel()
    med = np.median(values)
    return MAD_TO_SIGMA * float(np.median(np.abs(values - med)))


def _link_filter(mask, cube, config):
    labels, records = connected_components(mask, config.connectivity, intensity=cube)
    bad = []
    for r in records:
        nz, nr, nd = r.extent
        if nz < config.min_size_z or min(nr, nd) < config.min_size_xy or max(nr, nd) > config.max_size_xy:
            bad.append(r.id)
    if bad:
        lut = np.arange(len(records) + 1, dtype=np.int32)
        lut[bad] = 0
        labels = lut[labels]
    return labels > 0


def baseline_smooth_clip(cube, config: BaselineConfig | None = None):
    """Multi-scale smooth-and-clip source finding on a raw cube.

    For each (xy, z) boxcar pair the smoothed cube is thresholded at
    ``threshold_sigma`` times its MAD-based noise estimate (positive
    excursions only). Detections are unioned, linked into components and
    filtered by extent. Returns ``(labels, records)``.
    """
    config = config or BaselineConfig()
    data = np.asarray(getattr(cube, "data", cube), dtype=np.float32)
    union = np.zeros(data.shape, dtype=bool)
    for kz in config.kernels_z:
        for kxy in config.kernels_xy:
            sm = boxcar_smooth(data, kxy, kz)
            sigma = robust_sigma(sm)
            hit = sm > config.threshold_sigma * sigma
            if not config.union_before_linking:
                hit = _link_filter(hit, data, config)
            union |= hit
    final = _link_filter(union, data, config) if config.union_before_linking else union
    return connected_components(final, config.connectivity, intensity=data)


# -- model pipeline ---------------------------------------------------------------


@dataclass
class InferenceResult:
    probability: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    records: list
    coverage_count: np.ndarray


def run_inference(model, cube, patch_shape=None, stride=None, min_voxels=MIN_VOXELS, connectivity=26, rebin=None):
    """Full model post-processing chain on a raw cube.

    rebin (if the model was trained rebinned) -> clip/normalise ->
    overlap-averaged sliding window -> threshold 0.5 -> components ->
    size filter on the model grid -> back to the cube grid.
    """
    raw = np.asarray(getattr(cube, "data", cube), dtype=np.float32)
    config = getattr(model, "config", None)
    patch_shape = tuple(patch_shape or config.patch_shape)
    if rebin is None:
        rebin = bool(getattr(config, "rebin", False))
    multiple = config.divisor if config is not None else 8
    grid = rebin_freq(raw) if rebin else raw
    prob = sliding_window_infer(
        model, clip_normalize(grid), patch_shape, stride, multiple, pad_value=float(clip_normalize(0.0))
    )
    labels, records = connected_components(binarize(prob), connectivity)
    records, labels = size_filter(records, labels, min_voxels)
    values, coverage = prob.values, prob.coverage_count
    if rebin:
        values = unrebin_freq(values, raw.shape[0])
        coverage = unrebin_freq(coverage, raw.shape[0])
        labels, records = connected_components(unrebin_freq(labels > 0, raw.shape[0]), connectivity, intensity=raw)
    else:
        records = component_records(labels, None, raw)
    mask = (labels > 0).astype(np.uint8)
    return InferenceResult(values, mask, labels, records, coverage)
