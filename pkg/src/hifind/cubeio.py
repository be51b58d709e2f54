"""Volumetric data types and the HICUBE / catalog file formats.

HICUBE layout (all little-endian)::

    magic "HICB" | version u32 | dtype u8 (0=f32, 1=u8) | 3 reserved bytes
    | n_freq u64 | n_ra u64 | n_dec u64 | freq_res f64 | spatial_res f64
    | origin 3 x f64 | payload in C order over (freq, ra, dec)

A file may end with an optional provenance trailer ``"HIMD" | u32 length |
UTF-8 key=value lines`` written after the payload.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"HICB"
VERSION = 1
DTYPE_F32 = 0
DTYPE_U8 = 1
META_MAGIC = b"HIMD"

_HEADER = struct.Struct("<4sIB3xQQQddddd")
HEADER_SIZE = _HEADER.size  # 76

DEFAULT_FREQ_RES = 7.6  # kHz per voxel
DEFAULT_SPATIAL_RES = 0.0167  # degrees per voxel

CATALOG_COLUMNS = (
    "id", "freq_min", "freq_max", "ra_min", "ra_max",
    "dec_min", "dec_max", "n_voxels", "peak", "flux_sum",
)


class CubeIOError(Exception):
    """Base class for HICUBE and catalog failures."""


class CubeFormatError(CubeIOError):
    pass


class CubeCorruptError(CubeIOError):
    pass


class CubeValidationError(CubeIOError, ValueError):
    pass


class CatalogError(CubeIOError, ValueError):
    pass


def _check_shape(shape):
    if len(shape) != 3 or any(int(n) < 1 for n in shape):
        raise CubeValidationError(f"cube shape must be three positive counts, got {shape}")


@dataclass(eq=False)
class SpectralCube:
    """Intensity volume indexed (frequency, R.A., Dec.)."""

    data: np.ndarray
    freq_res: float = DEFAULT_FREQ_RES
    spatial_res: float = DEFAULT_SPATIAL_RES
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        _check_shape(self.data.shape)
        if not np.isfinite(self.data).all():
            raise CubeValidationError("cube contains NaN or Inf values")
        self.origin = tuple(float(v) for v in self.origin)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def with_data(self, data) -> "SpectralCube":
        return SpectralCube(data, self.freq_res, self.spatial_res, self.origin, dict(self.meta))

    def __eq__(self, other):
        if not isinstance(other, SpectralCube):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.data.tobytes() == other.data.tobytes()
            and (self.freq_res, self.spatial_res, self.origin)
            == (other.freq_res, other.spatial_res, other.origin)
        )


@dataclass(eq=False)
class LabelVolume:
    """Voxel mask (binary) or component labelling over a cube grid."""

    data: np.ndarray
    binary: bool = True
    freq_res: float = DEFAULT_FREQ_RES
    spatial_res: float = DEFAULT_SPATIAL_RES
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data)
        _check_shape(data.shape)
        if data.dtype.kind == "f" and not np.array_equal(data, np.round(data)):
            raise CubeValidationError("label values must be integers")
        if data.size and data.min() < 0:
            raise CubeValidationError("label values must be non-negative")
        if self.binary:
            if data.size and data.max() > 1:
                raise CubeValidationError("binary mask contains values other than 0/1")
            data = data.astype(np.uint8)
        else:
            data = data.astype(np.int32)
        self.data = np.ascontiguousarray(data)
        self.origin = tuple(float(v) for v in self.origin)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def __eq__(self, other):
        if not isinstance(other, LabelVolume):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)


@dataclass
class SourceRecord:
    """One connected component: inclusive voxel bounding box plus photometry."""

    id: int
    bbox: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]
    n_voxels: int
    peak: float = 0.0
    flux_sum: float = 0.0

    def __post_init__(self):
        if self.n_voxels < 1:
            raise CatalogError(f"record {self.id} has n_voxels={self.n_voxels}")
        self.bbox = tuple((int(lo), int(hi)) for lo, hi in self.bbox)

    @property
    def extent(self) -> tuple[int, int, int]:
        return tuple(hi - lo + 1 for lo, hi in self.bbox)


# -- HICUBE -----------------------------------------------------------------


def _encode_meta(meta):
    if not meta:
        return b""
    text = "".join(f"{k}={meta[k]}\n" for k in sorted(meta)).encode("utf-8")
    return META_MAGIC + struct.pack("<I", len(text)) + text


def _decode_meta(blob):
    if not blob:
        return {}
    if len(blob) < 8 or blob[:4] != META_MAGIC:
        raise CubeCorruptError("unexpected bytes after payload")
    (length,) = struct.unpack("<I", blob[4:8])
    if len(blob) != 8 + length:
        raise CubeCorruptError("provenance trailer length mismatch")
    meta = {}
    for line in blob[8:].decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        meta[key] = value
    return meta


def _write_volume(path, array, dtype_code, freq_res, spatial_res, origin, meta):
    header = _HEADER.pack(
        MAGIC, VERSION, dtype_code, *array.shape, freq_res, spatial_res, *origin
    )
    payload = np.ascontiguousarray(array, dtype="<f4" if dtype_code == DTYPE_F32 else "u1")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())
        fh.write(_encode_meta(meta))


def _read_volume(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CubeFormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < HEADER_SIZE:
        raise CubeCorruptError(f"{path}: truncated header")
    magic, version, dtype_code, nf, nr, nd, freq_res, spatial_res, o0, o1, o2 = _HEADER.unpack_from(blob)
    if version != VERSION:
        raise CubeFormatError(f"{path}: unsupported version {version}")
    if dtype_code not in (DTYPE_F32, DTYPE_U8):
        raise CubeFormatError(f"{path}: unknown dtype code {dtype_code}")
    itemsize = 4 if dtype_code == DTYPE_F32 else 1
    n = nf * nr * nd
    end = HEADER_SIZE + n * itemsize
    if len(blob) < end:
        raise CubeCorruptError(f"{path}: payload holds {len(blob) - HEADER_SIZE} bytes, expected {n * itemsize}")
    meta = _decode_meta(blob[end:])
    data = np.frombuffer(blob, dtype="<f4" if itemsize == 4 else "u1", count=n, offset=HEADER_SIZE)
    return dtype_code, data.reshape(nf, nr, nd), freq_res, spatial_res, (o0, o1, o2), meta


def write_cube(cube: SpectralCube, path) -> None:
    _write_volume(path, cube.data, DTYPE_F32, cube.freq_res, cube.spatial_res, cube.origin, cube.meta)


def read_cube(path) -> SpectralCube:
    dtype_code, data, freq_res, spatial_res, origin, meta = _read_volume(path)
    if dtype_code != DTYPE_F32:
        raise CubeFormatError(f"{path}: holds a mask, not an intensity cube")
    if not np.isfinite(data).all():
        raise CubeValidationError(f"{path}: payload contains NaN or Inf")
    return SpectralCube(data.astype(np.float32), freq_res, spatial_res, origin, meta)


def write_mask(volume: LabelVolume, path) -> None:
    if volume.data.size and volume.data.max() > 255:
        raise CubeValidationError("label values above 255 do not fit the 8-bit payload")
    _write_volume(
        path, volume.data, DTYPE_U8, volume.freq_res, volume.spatial_res, volume.origin, volume.meta
    )


def read_mask(path, binary: bool = True) -> LabelVolume:
    dtype_code, data, freq_res, spatial_res, origin, meta = _read_volume(path)
    if dtype_code != DTYPE_U8:
        raise CubeFormatError(f"{path}: holds an intensity cube, not a mask")
    return LabelVolume(data.copy(), binary, freq_res, spatial_res, origin, meta)


# -- catalogs ---------------------------------------------------------------


def write_catalog(records, path, meta=None) -> None:
    """Write records as CSV; ``meta`` becomes leading ``# key=value`` lines."""
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise CatalogError("duplicate source ids in catalog")
    with open(path, "w", newline="") as fh:
        for key in sorted(meta or {}):
            fh.write(f"# {key}={meta[key]}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CATALOG_COLUMNS)
        for r in records:
            (f0, f1), (r0, r1), (d0, d1) = r.bbox
            writer.writerow([r.id, f0, f1, r0, r1, d0, d1, r.n_voxels, repr(float(r.peak)), repr(float(r.flux_sum))])


def read_catalog_meta(path) -> dict[str, str]:
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
    return meta


def read_catalog(path) -> list[SourceRecord]:
    with open(path, newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader, None)
    if header is None or tuple(header) != CATALOG_COLUMNS:
        raise CatalogError(f"{path}: unexpected catalog header {header}")
    records = []
    for row in reader:
        if not row:
            continue
        i, f0, f1, r0, r1, d0, d1, n = (int(v) for v in row[:8])
        records.append(SourceRecord(i, ((f0, f1), (r0, r1), (d0, d1)), n, float(row[8]), float(row[9])))
    return records


def file_meta(path) -> dict[str, str]:
    """Provenance of any HICUBE or catalog file (empty when none was written)."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return _read_volume(path)[5]
    return read_catalog_meta(path)

