"""Connected-component labelling and per-component catalog records."""
import numpy as np

from . import kernels
from .cubeio import SourceRecord


def _as_array(volume):
    return np.asarray(getattr(volume, "data", volume))


def connected_components(mask, connectivity=26, intensity=None):
    """Label the foreground of ``mask``.

    Returns ``(labels, records)``: an int32 volume with ids 1..K numbered by
    each component's first voxel in C order, and one SourceRecord per id.
    Peak and flux come from ``intensity`` when given, else they are zero.
    """
    mask = _as_array(mask)
    if mask.ndim != 3:
        raise ValueError(f"mask must be 3D, got shape {mask.shape}")
    labels, k = kernels.label3d(mask != 0, connectivity)
    return labels, component_records(labels, k, intensity)


def component_records(labels, n_labels=None, intensity=None):
    labels = _as_array(labels)
    flat = labels.ravel()
    fg = np.flatnonzero(flat)
    if n_labels is None:
        n_labels = int(flat.max()) if flat.size else 0
    if fg.size == 0 or n_labels == 0:
        return []
    lab = flat[fg]
    counts = np.bincount(lab, minlength=n_labels + 1)
    coords = np.unravel_index(fg, labels.shape)
    lo = np.zeros((3, n_labels + 1), dtype=np.int64)
    hi = np.zeros((3, n_labels + 1), dtype=np.int64)
    for axis in range(3):
        lo[axis] = np.iinfo(np.int64).max
        hi[axis] = -1
        np.minimum.at(lo[axis], lab, coords[axis])
        np.maximum.at(hi[axis], lab, coords[axis])
    peak = np.zeros(n_labels + 1)
    flux = np.zeros(n_labels + 1)
    if intensity is not None:
        vals = _as_array(intensity).ravel()[fg].astype(np.float64)
        peak[:] = -np.inf
        np.maximum.at(peak, lab, vals)
        flux = np.bincount(lab, weights=vals, minlength=n_labels + 1)
    records = []
    for i in np.flatnonzero(counts):
        if i == 0:
            continue
        bbox = tuple((int(lo[a, i]), int(hi[a, i])) for a in range(3))
        records.append(SourceRecord(int(i), bbox, int(counts[i]), float(peak[i]), float(flux[i])))
    return records
