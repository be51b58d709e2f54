"""Synthetic spectral cubes with HI-like sources, RFI and baseline ripple.

Sources are separable: a frequency profile (Gaussian or double-horn) times
a 2D Gaussian in R.A./Dec. The ground-truth mask is the set of voxels where
the noiseless source contribution exceeds half the noise sigma, so each
requested extent is the width of that mask along its axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .components import connected_components
from .cubeio import LabelVolume, SpectralCube

PROFILES = ("gaussian", "double_horn")
RFI_KINDS = ("narrowband_persistent", "broadband_burst")
MASK_SIGMA_FRACTION = 0.5
MAX_PLACEMENT_TRIES = 100
_SUPPORT_LEVEL = 1e-6

# double-horn shape exp(-u^4/2) * (1 + 1.5 u^2) peaks at u^2 = (sqrt(40) - 2) / 6
_HORN_U = math.sqrt((math.sqrt(40.0) - 2.0) / 6.0)
_HORN_PEAK = math.exp(-_HORN_U**4 / 2.0) * (1.0 + 1.5 * _HORN_U**2)


class PlacementError(RuntimeError):
    pass


class FootprintError(ValueError):
    pass


def profile(kind: str, u):
    """Unit-peak line profile evaluated at offsets ``u`` (in scale units)."""
    u = np.asarray(u, dtype=np.float64)
    if kind == "gaussian":
        return np.exp(-0.5 * u * u)
    if kind == "double_horn":
        u2 = u * u
        return np.exp(-0.5 * u2 * u2) * (1.0 + 1.5 * u2) / _HORN_PEAK
    raise ValueError(f"unknown profile {kind!r}")


def profile_crossing(kind: str, level: float) -> float:
    """Outermost |u| where the profile falls to ``level`` (0 < level < 1)."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if kind == "gaussian":
        return math.sqrt(-2.0 * math.log(level))
    hi = 1.0
    while profile(kind, hi) > level:
        hi *= 2.0
    return brentq(lambda u: float(profile(kind, u)) - level, _HORN_U, hi, xtol=1e-12)


@dataclass
class RfiSpec:
    """Interference pattern; ``strength`` is a multiple of the noise sigma.

    ``extent`` holds one optional inclusive ``(lo, hi)`` voxel range per axis.
    A narrowband stripe occupies the frequency range and, by default, the
    whole spatial plane; a broadband burst occupies the R.A. range across all
    frequencies. An unset placement range is drawn at random ``width`` wide.
    """

    kind: str = "narrowband_persistent"
    strength: float = 3.0
    extent: tuple = (None, None, None)
    width: int = 5

    def __post_init__(self):
        if self.kind not in RFI_KINDS:
            raise ValueError(f"unknown RFI kind {self.kind!r}")
        if self.strength < 0:
            raise ValueError("RFI strength must be non-negative")
        if self.width < 1:
            raise ValueError("RFI width must be positive")
        self.extent = tuple(None if e is None else (int(e[0]), int(e[1])) for e in self.extent)


@dataclass
class SourceParams:
    center: tuple[float, float, float]
    scale: tuple[float, float, float]
    amplitude: float
    profile: str = "gaussian"
    mask_threshold: float = 0.0


@dataclass
class SynthSpec:
    cube_shape: tuple[int, int, int] = (512, 32, 32)
    noise_sigma_range: tuple[float, float] = (2.8, 3.8)
    n_sources: int = 3
    source_extent_freq: tuple[int, int] = (60, 400)
    source_extent_spatial: tuple[int, int] = (4, 14)
    source_amplitude_range: tuple[float, float] = (6.0, 20.0)
    rfi: list[RfiSpec] = field(default_factory=list)
    ripple_amplitude: float = 0.0
    profiles: tuple[str, ...] = PROFILES
    min_separation: int = 1
    seed: int = 0

    def __post_init__(self):
        self.cube_shape = tuple(int(n) for n in self.cube_shape)
        for name in ("noise_sigma_range", "source_extent_freq", "source_extent_spatial", "source_amplitude_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered lo <= hi, got {(lo, hi)}")
        if self.noise_sigma_range[0] < 0:
            raise ValueError("noise sigma must be non-negative")
        if self.n_sources < 0:
            raise ValueError("n_sources must be >= 0")
        if self.min_separation < 1:
            raise ValueError("min_separation must be >= 1")
        if len(self.cube_shape) != 3 or min(self.cube_shape) < 1:
            raise ValueError(f"bad cube shape {self.cube_shape}")
        if self.n_sources and (
            self.source_extent_freq[0] < 1 or self.source_extent_spatial[0] < 1
        ):
            raise ValueError("source extents must be positive")
        if self.n_sources and (
            self.source_extent_freq[1] > self.cube_shape[0]
            or self.source_extent_spatial[1] > min(self.cube_shape[1:])
        ):
            raise ValueError("cube too small for the largest source extent")
        for kind in self.profiles:
            if kind not in PROFILES:
                raise ValueError(f"unknown profile {kind!r}")


def _mask_half_widths(params: SourceParams):
    if params.amplitude <= params.mask_threshold:
        return None
    level = params.mask_threshold / params.amplitude if params.mask_threshold > 0 else _SUPPORT_LEVEL
    kinds = (params.profile, "gaussian", "gaussian")
    return tuple(s * profile_crossing(k, level) for s, k in zip(params.scale, kinds))


def inject_source(cube, mask, params: SourceParams) -> None:
    """Add one source to ``cube`` in place and mark its above-threshold voxels."""
    cube = np.asarray(cube)
    half = _mask_half_widths(params)
    if half is not None:
        for c, h, n in zip(params.center, half, cube.shape):
            if c - h < -0.5 - 1e-9 or c + h > n - 0.5 + 1e-9:
                raise FootprintError(f"source footprint {c - h:.1f}..{c + h:.1f} leaves axis of length {n}")
    kinds = (params.profile, "gaussian", "gaussian")
    axes = []
    slices = []
    for c, s, k, n in zip(params.center, params.scale, kinds, cube.shape):
        reach = s * profile_crossing(k, _SUPPORT_LEVEL)
        lo = max(0, int(math.floor(c - reach)))
        hi = min(n, int(math.ceil(c + reach)) + 1)
        if lo >= hi:
            return
        slices.append(slice(lo, hi))
        axes.append(profile(k, (np.arange(lo, hi) - c) / s))
    shape_prof = axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :]
    contribution = params.amplitude * shape_prof
    region = tuple(slices)
    cube[region] += contribution.astype(cube.dtype)
    if mask is not None:
        mask[region] |= (contribution > params.mask_threshold).astype(mask.dtype)


def inject_rfi(cube, rfi: RfiSpec, sigma: float = 1.0, rng=None) -> None:
    """Add an RFI pattern in place. The ground-truth mask is never touched."""
    cube = np.asarray(cube)
    if rfi.strength == 0:
        return
    rng = rng if rng is not None else np.random.default_rng(0)
    placed_axis = 0 if rfi.kind == "narrowband_persistent" else 1
    region = []
    for axis, n in enumerate(cube.shape):
        rng_ext = rfi.extent[axis]
        if rng_ext is None:
            if axis == placed_axis:
                width = min(rfi.width, n)
                lo = int(rng.integers(0, n - width + 1))
                rng_ext = (lo, lo + width - 1)
            else:
                rng_ext = (0, n - 1)
        lo, hi = rng_ext
        if not 0 <= lo <= hi < n:
            raise FootprintError(f"RFI extent {rng_ext} outside axis {axis} of length {n}")
        region.append(slice(lo, hi + 1))
    cube[tuple(region)] += np.float32(rfi.strength * sigma)


def _draw_source(spec: SynthSpec, rng, sigma, placed):
    nf, nr, nd = spec.cube_shape
    ef = int(rng.integers(spec.source_extent_freq[0], spec.source_extent_freq[1] + 1))
    er = int(rng.integers(spec.source_extent_spatial[0], spec.source_extent_spatial[1] + 1))
    ed = int(rng.integers(spec.source_extent_spatial[0], spec.source_extent_spatial[1] + 1))
    snr = float(rng.uniform(*spec.source_amplitude_range))
    kind = spec.profiles[int(rng.integers(len(spec.profiles)))]
    extents = (ef, er, ed)
    for _ in range(MAX_PLACEMENT_TRIES):
        # integer centre for odd extents, half-integer for even ones
        starts = [int(rng.integers(0, n - e + 1)) for n, e in zip(spec.cube_shape, extents)]
        box = [(s, s + e - 1) for s, e in zip(starts, extents)]
        # boxes need a gap of min_separation empty voxels along at least one axis
        gap = spec.min_separation
        if any(all(a0 <= b1 + gap and b0 <= a1 + gap for (a0, a1), (b0, b1) in zip(box, other)) for other in placed):
            continue
        center = tuple(s + (e - 1) / 2.0 for s, e in zip(starts, extents))
        threshold = MASK_SIGMA_FRACTION * sigma
        amplitude = snr * sigma
        scale = (1.0, 1.0, 1.0)
        if amplitude > threshold > 0:
            level = threshold / amplitude
            kinds = (kind, "gaussian", "gaussian")
            scale = tuple((e / 2.0) / profile_crossing(k, level) for e, k in zip(extents, kinds))
        params = SourceParams(center, scale, amplitude, kind, threshold)
        return params, box
    raise PlacementError(f"could not place source {len(placed) + 1} after {MAX_PLACEMENT_TRIES} tries")


def _generate(spec: SynthSpec):
    rng = np.random.default_rng(spec.seed)
    sigma = float(rng.uniform(*spec.noise_sigma_range))
    nf = spec.cube_shape[0]
    data = rng.standard_normal(spec.cube_shape) * sigma
    if spec.ripple_amplitude:
        period = rng.uniform(nf / 4.0, nf)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        ripple = spec.ripple_amplitude * np.sin(2.0 * math.pi * np.arange(nf) / period + phase)
        data += ripple[:, None, None]
    mask = np.zeros(spec.cube_shape, dtype=np.uint8)
    placed, sources = [], []
    for _ in range(spec.n_sources):
        params, box = _draw_source(spec, rng, sigma, placed)
        placed.append(box)
        sources.append(params)
        inject_source(data, mask, params)
    for rfi in spec.rfi:
        inject_rfi(data, rfi, sigma, rng)
    return data.astype(np.float32), mask, sigma, sources


def synth_sources(spec: SynthSpec) -> list[SourceParams]:
    """The injected source parameters of ``synth_cube(spec)``, in draw order."""
    return _generate(spec)[3]


def synth_cube(spec: SynthSpec):
    """Generate ``(cube, mask, catalog)``; a pure function of ``spec``."""
    data, mask, sigma, _ = _generate(spec)
    _, records = connected_components(mask, 26, intensity=data)
    meta = {"seed": str(spec.seed), "noise_sigma": repr(sigma)}
    return SpectralCube(data, meta=meta), LabelVolume(mask, meta=dict(meta)), records
