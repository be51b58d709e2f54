"""Pure NumPy versions of the compiled kernels in ``_ckernels.pyx``."""
import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col3d(xp, kernel, stride, out_shape):
    kf, kr, kd = kernel
    sf, sr, sd = stride
    Fo, Ro, Do = out_shape
    N, C = xp.shape[:2]
    win = sliding_window_view(xp, kernel, axis=(2, 3, 4))
    win = win[:, :, : (Fo - 1) * sf + 1 : sf, : (Ro - 1) * sr + 1 : sr, : (Do - 1) * sd + 1 : sd]
    # (N, C, Fo, Ro, Do, kf, kr, kd) -> (C, kf, kr, kd, N, Fo, Ro, Do)
    cols = win.transpose(1, 5, 6, 7, 0, 2, 3, 4)
    return np.ascontiguousarray(cols).reshape(C * kf * kr * kd, N * Fo * Ro * Do)


def col2im3d(cols, xp_shape, kernel, stride, out_shape):
    kf, kr, kd = kernel
    sf, sr, sd = stride
    Fo, Ro, Do = out_shape
    N, C = xp_shape[:2]
    xp = np.zeros(xp_shape, dtype=cols.dtype)
    blocks = cols.reshape(C, kf, kr, kd, N, Fo, Ro, Do)
    for a, b, e in itertools.product(range(kf), range(kr), range(kd)):
        xp[:, :, a : a + sf * Fo : sf, b : b + sr * Ro : sr, e : e + sd * Do : sd] += (
            blocks[:, a, b, e].transpose(1, 0, 2, 3, 4)
        )
    return xp


def _neighbor_offsets(connectivity):
    offs = []
    for off in itertools.product((-1, 0, 1), repeat=3):
        order = sum(o != 0 for o in off)
        if order == 0:
            continue
        if connectivity == 6 and order > 1:
            continue
        if connectivity == 18 and order > 2:
            continue
        offs.append(off)
    return offs


def label3d(mask, connectivity):
    """Min-index propagation with pointer jumping until a fixed point."""
    if connectivity not in (6, 18, 26):
        raise ValueError(f"connectivity must be 6, 18 or 26, got {connectivity}")
    fg = np.asarray(mask, dtype=bool)
    shape = fg.shape
    labels = np.zeros(shape, dtype=np.int32)
    if not fg.any():
        return labels, 0
    big = np.iinfo(np.int64).max
    lab = np.where(fg, np.arange(fg.size, dtype=np.int64).reshape(shape), big)
    padded = np.full(tuple(n + 2 for n in shape), big, dtype=np.int64)
    inner = tuple(slice(1, n + 1) for n in shape)
    offsets = _neighbor_offsets(connectivity)
    flat_idx = np.flatnonzero(fg)
    while True:
        padded[inner] = lab
        new = lab.copy()
        for off in offsets:
            view = padded[tuple(slice(1 + o, n + 1 + o) for o, n in zip(off, shape))]
            np.minimum(new, view, out=new)
        new[~fg] = big
        # pointer jumping: every label is the index of a voxel in the same component
        flat = new.ravel()
        while True:
            hop = flat[flat[flat_idx]]
            if np.array_equal(hop, flat[flat_idx]):
                break
            flat[flat_idx] = hop
        if np.array_equal(new, lab):
            break
        lab = new
    roots = lab[fg]
    uniq, inverse = np.unique(roots, return_inverse=True)
    labels[fg] = (inverse + 1).astype(np.int32)
    return labels, int(uniq.size)
