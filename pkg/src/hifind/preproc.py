"""Intensity windowing, frequency rebinning, patch cropping and augmentation."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .components import connected_components

CLIP_LOW = -15.0
CLIP_HIGH = 35.0
REBIN_KERNEL = 6
REBIN_STRIDE = 4


class RebinSizeError(ValueError):
    pass


class NoSourcesWarning(UserWarning):
    pass


@dataclass
class Patch:
    data: np.ndarray
    label: np.ndarray
    offset: tuple[int, int, int]
    valid_extent: tuple[int, int, int]

    def __post_init__(self):
        if self.data.shape != self.label.shape:
            raise ValueError(f"patch data {self.data.shape} and label {self.label.shape} differ")


@dataclass
class AugmentConfig:
    flip_prob: float = 0.5
    noise_mu: float = 0.0
    noise_sigma_range: tuple[float, float] = (2.8, 3.8)
    cutmix_intensity_range: tuple[float, float] = (0.30, 0.80)
    cutmix_prob: float = 0.5

    def __post_init__(self):
        for name in ("flip_prob", "cutmix_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        for name in ("noise_sigma_range", "cutmix_intensity_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered, got {(lo, hi)}")


def clip_normalize(x, low=CLIP_LOW, high=CLIP_HIGH):
    """Clip to ``[low, high]`` and map affinely onto ``[0, 1]``."""
    x = np.asarray(x)
    dtype = x.dtype if x.dtype.kind == "f" else np.float32
    return ((np.clip(x, low, high) - low) / (high - low)).astype(dtype, copy=False)


def rebinned_length(n_freq: int) -> int:
    if n_freq < REBIN_KERNEL:
        raise RebinSizeError(f"need at least {REBIN_KERNEL} channels to rebin, got {n_freq}")
    return (n_freq - REBIN_KERNEL) // REBIN_STRIDE + 1


def _rebin_windows(x):
    x = np.asarray(x)
    n_out = rebinned_length(x.shape[0])
    # window j covers channels 4j .. 4j+5; split into a stride-4 block plus the 2-channel overlap
    head = x[: REBIN_STRIDE * n_out].reshape(n_out, REBIN_STRIDE, *x.shape[1:])
    tail_idx = np.arange(n_out)[:, None] * REBIN_STRIDE + np.arange(REBIN_STRIDE, REBIN_KERNEL)
    return head, x[tail_idx]


def rebin_freq(cube):
    """Average-pool the frequency axis with window 6 and stride 4."""
    head, tail = _rebin_windows(cube)
    dtype = np.result_type(np.asarray(cube).dtype, np.float32)
    total = head.sum(axis=1, dtype=np.float64) + tail.sum(axis=1, dtype=np.float64)
    return (total / REBIN_KERNEL).astype(dtype)


def rebin_mask(mask):
    """Any-hit max over the same windows as :func:`rebin_freq`."""
    head, tail = _rebin_windows(mask)
    return np.maximum(head.max(axis=1), tail.max(axis=1))


def unrebin_freq(x, n_freq: int):
    """Nearest-window upsampling from a rebinned grid back to ``n_freq`` channels."""
    x = np.asarray(x)
    centers = (np.arange(n_freq) - (REBIN_KERNEL - 1) / 2.0) / REBIN_STRIDE
    idx = np.clip(np.floor(centers + 0.5).astype(int), 0, x.shape[0] - 1)
    return x[idx]


def axis_offsets(axis_len: int, patch_len: int, stride: int) -> list[int]:
    if patch_len < 1 or stride < 1:
        raise ValueError("patch length and stride must be positive")
    if stride > patch_len:
        raise ValueError(f"stride {stride} exceeds patch length {patch_len}; windows would leave gaps")
    if axis_len <= patch_len:
        return [0]
    offsets = list(range(0, axis_len - patch_len + 1, stride))
    if offsets[-1] != axis_len - patch_len:
        offsets.append(axis_len - patch_len)
    return offsets


def crop_patches(cube_shape, patch_shape, stride=None):
    """Sliding-window offsets covering every voxel; stride defaults to half the patch."""
    if stride is None:
        stride = tuple(max(1, p // 2) for p in patch_shape)
    per_axis = [axis_offsets(n, p, s) for n, p, s in zip(cube_shape, patch_shape, stride)]
    return [(f, r, d) for f in per_axis[0] for r in per_axis[1] for d in per_axis[2]]


def extract_patch(volume, offset, patch_shape, fill=0):
    """Cut a block at ``offset``; axes shorter than the patch are padded with ``fill``."""
    volume = np.asarray(volume)
    out = np.full(patch_shape, fill, dtype=volume.dtype)
    src = tuple(slice(o, min(o + p, n)) for o, p, n in zip(offset, patch_shape, volume.shape))
    valid = tuple(s.stop - s.start for s in src)
    out[tuple(slice(0, v) for v in valid)] = volume[src]
    return out, valid


def random_flip(patch: Patch, rng, flip_prob: float = 0.5, decisions=None) -> Patch:
    """Reverse each axis independently with probability ``flip_prob``."""
    if decisions is None:
        decisions = rng.random(3) < flip_prob
    axes = tuple(a for a in range(3) if decisions[a])
    if not axes:
        return patch
    return Patch(
        np.ascontiguousarray(np.flip(patch.data, axes)),
        np.ascontiguousarray(np.flip(patch.label, axes)),
        patch.offset,
        patch.valid_extent,
    )


def add_gaussian_noise(patch: Patch, rng, sigma_range=(2.8, 3.8), mu=0.0) -> Patch:
    """Add i.i.d. Normal(mu, sigma^2) with sigma drawn once from U(sigma_range)."""
    lo, hi = sigma_range
    if hi == 0 and mu == 0:
        return patch
    sigma = rng.uniform(lo, hi)
    noise = rng.normal(mu, sigma, size=patch.data.shape)
    return Patch((patch.data + noise).astype(patch.data.dtype), patch.label, patch.offset, patch.valid_extent)


def local_background(volume, mask, bbox, margin=4):
    """Median of unmasked voxels in the bounding box grown by ``margin``."""
    region = tuple(
        slice(max(0, lo - margin), min(n, hi + margin + 1)) for (lo, hi), n in zip(bbox, volume.shape)
    )
    vals = volume[region][mask[region] == 0]
    return float(np.median(vals)) if vals.size else 0.0


def cutmix_degrade(volume, mask, rng, intensity_range=(0.30, 0.80), alpha=None):
    """Fade one labelled source toward its local background.

    Returns a modified copy where the chosen component's voxels become
    ``background + alpha * (value - background)``; ``mask`` is not changed.
    """
    volume = np.asarray(volume)
    labels, records = connected_components(mask, 26)
    if not records:
        return volume.copy()
    rec = records[int(rng.integers(len(records)))]
    if alpha is None:
        alpha = rng.uniform(*intensity_range)
    out = volume.copy()
    bg = local_background(volume, mask, rec.bbox)
    sel = labels == rec.id
    out[sel] = (bg + alpha * (volume[sel].astype(np.float64) - bg)).astype(volume.dtype)
    return out


def raw_patch_length(n_rebinned: int) -> int:
    """Raw channels needed for ``n_rebinned`` output channels."""
    return REBIN_STRIDE * (n_rebinned - 1) + REBIN_KERNEL


def rebin_patch(patch: Patch) -> Patch:
    valid_f = patch.valid_extent[0]
    return Patch(
        rebin_freq(patch.data),
        rebin_mask(patch.label),
        (patch.offset[0] // REBIN_STRIDE,) + tuple(patch.offset[1:]),
        (rebinned_length(valid_f) if valid_f >= REBIN_KERNEL else 1,) + tuple(patch.valid_extent[1:]),
    )


def prepare_patch(patch: Patch, rebin: bool = False) -> Patch:
    """Deterministic path used for validation: optional rebin, then clip/normalise."""
    if rebin:
        patch = rebin_patch(patch)
    return Patch(clip_normalize(patch.data), patch.label, patch.offset, patch.valid_extent)


def augment(patch: Patch, rng, config: AugmentConfig, rebin: bool = False) -> Patch:
    """flip -> cut-mix -> noise -> (rebin) -> clip/normalise.

    Noise is added at the native resolution so its sigma matches the survey
    noise the augmentation imitates.
    """
    patch = random_flip(patch, rng, config.flip_prob)
    if config.cutmix_prob > 0 and rng.random() < config.cutmix_prob and patch.label.any():
        patch = Patch(
            cutmix_degrade(patch.data, patch.label, rng, config.cutmix_intensity_range),
            patch.label, patch.offset, patch.valid_extent,
        )
    patch = add_gaussian_noise(patch, rng, config.noise_sigma_range, config.noise_mu)
    return prepare_patch(patch, rebin)


def _positive_offset(rec, labels, cube_shape, patch_shape, rng, tries=64):
    """Random offset whose window holds >= half of the component, else the best found."""
    best, best_frac = None, -1.0
    for _ in range(tries):
        offset = []
        for (lo, hi), n, p in zip(rec.bbox, cube_shape, patch_shape):
            if n <= p:
                offset.append(0)
                continue
            # windows that overlap the component's bounding box
            first = max(0, hi - p + 1)
            last = min(n - p, lo)
            if first > last:
                # component longer than the patch: any window inside the box
                first, last = lo, min(hi - p + 1, n - p)
            offset.append(int(rng.integers(first, last + 1)))
        window = tuple(slice(o, o + p) for o, p in zip(offset, patch_shape))
        frac = np.count_nonzero(labels[window] == rec.id) / rec.n_voxels
        if frac >= 0.5:
            return tuple(offset), frac
        if frac > best_frac:
            best, best_frac = tuple(offset), frac
    return best, best_frac


def sample_training_patches(cube, mask, rng, n, patch_shape=(128, 16, 16)):
    """Draw ``n`` patches, half centred on sources and half uniformly placed.

    A positive patch holds at least half of some source's voxels whenever the
    patch is large enough to do so. Negative patches are negative by intent
    only; their labels are the true mask. Without sources every patch is
    negative and a :class:`NoSourcesWarning` is emitted.
    """
    if n % 2:
        raise ValueError(f"patch count must be even, got {n}")
    cube = np.asarray(getattr(cube, "data", cube))
    mask = np.asarray(getattr(mask, "data", mask))
    labels, records = connected_components(mask, 26)
    n_pos = n // 2 if records else 0
    if n and not records:
        warnings.warn("no labelled sources: sampling negative patches only", NoSourcesWarning, stacklevel=2)
    offsets = []
    for _ in range(n_pos):
        rec = records[int(rng.integers(len(records)))]
        offset, _ = _positive_offset(rec, labels, cube.shape, patch_shape, rng)
        offsets.append(offset)
    for _ in range(n - n_pos):
        offsets.append(tuple(int(rng.integers(0, max(1, c - p + 1))) for c, p in zip(cube.shape, patch_shape)))
    patches = []
    for offset in offsets:
        data, valid = extract_patch(cube, offset, patch_shape)
        label, _ = extract_patch(mask, offset, patch_shape)
        patches.append(Patch(data, label.astype(np.uint8), offset, valid))
    return patches
