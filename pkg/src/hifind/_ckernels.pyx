# Compiled hot loops. hifind.kernels falls back to hifind._pykernels when
# this extension is not built; both must return identical results.
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int32_t, int64_t, uint8_t

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col3d(real[:, :, :, :, ::1] xp, tuple kernel, tuple stride, tuple out_shape):
    cdef Py_ssize_t N = xp.shape[0], C = xp.shape[1]
    cdef Py_ssize_t kf = kernel[0], kr = kernel[1], kd = kernel[2]
    cdef Py_ssize_t sf = stride[0], sr = stride[1], sd = stride[2]
    cdef Py_ssize_t Fo = out_shape[0], Ro = out_shape[1], Do = out_shape[2]
    cdef Py_ssize_t n, c, a, b, e, f, r, d, row, col
    dtype = np.float32 if real is float else np.float64
    cols_arr = np.empty((C * kf * kr * kd, N * Fo * Ro * Do), dtype=dtype)
    cdef real[:, ::1] cols = cols_arr
    with nogil:
        for c in range(C):
            for a in range(kf):
                for b in range(kr):
                    for e in range(kd):
                        row = ((c * kf + a) * kr + b) * kd + e
                        col = 0
                        for n in range(N):
                            for f in range(Fo):
                                for r in range(Ro):
                                    if sd == 1:
                                        for d in range(Do):
                                            cols[row, col + d] = xp[n, c, f * sf + a, r * sr + b, d + e]
                                    else:
                                        for d in range(Do):
                                            cols[row, col + d] = xp[n, c, f * sf + a, r * sr + b, d * sd + e]
                                    col += Do
    return cols_arr


def col2im3d(real[:, ::1] cols, tuple xp_shape, tuple kernel, tuple stride, tuple out_shape):
    cdef Py_ssize_t N = xp_shape[0], C = xp_shape[1]
    cdef Py_ssize_t kf = kernel[0], kr = kernel[1], kd = kernel[2]
    cdef Py_ssize_t sf = stride[0], sr = stride[1], sd = stride[2]
    cdef Py_ssize_t Fo = out_shape[0], Ro = out_shape[1], Do = out_shape[2]
    cdef Py_ssize_t n, c, a, b, e, f, r, d, row, col
    dtype = np.float32 if real is float else np.float64
    xp_arr = np.zeros(xp_shape, dtype=dtype)
    cdef real[:, :, :, :, ::1] xp = xp_arr
    with nogil:
        for c in range(C):
            for a in range(kf):
                for b in range(kr):
                    for e in range(kd):
                        row = ((c * kf + a) * kr + b) * kd + e
                        col = 0
                        for n in range(N):
                            for f in range(Fo):
                                for r in range(Ro):
                                    for d in range(Do):
                                        xp[n, c, f * sf + a, r * sr + b, d * sd + e] += cols[row, col + d]
                                    col += Do
    return xp_arr


cdef inline int64_t _find(int64_t[::1] parent, int64_t i) noexcept nogil:
    cdef int64_t root = i, nxt
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


cdef inline void _union(int64_t[::1] parent, int64_t a, int64_t b) noexcept nogil:
    a = _find(parent, a)
    b = _find(parent, b)
    # smaller index wins so roots are first voxels in raster order
    if a < b:
        parent[b] = a
    elif b < a:
        parent[a] = b


def label3d(const uint8_t[:, :, ::1] mask, int connectivity):
    """Two-pass union-find labelling; labels numbered by first voxel in C order."""
    cdef Py_ssize_t F = mask.shape[0], R = mask.shape[1], D = mask.shape[2]
    cdef Py_ssize_t f, r, d, k, nf, nr, nd
    cdef int64_t i, j
    cdef int n_off
    cdef int offs[13][3]
    if connectivity == 6:
        for k in range(3):
            offs[k][0] = -1 if k == 0 else 0
            offs[k][1] = -1 if k == 1 else 0
            offs[k][2] = -1 if k == 2 else 0
        n_off = 3
    elif connectivity == 18 or connectivity == 26:
        n_off = 0
        for f in range(-1, 2):
            for r in range(-1, 2):
                for d in range(-1, 2):
                    if (f, r, d) >= (0, 0, 0):
                        continue
                    if connectivity == 18 and (f != 0) + (r != 0) + (d != 0) == 3:
                        continue
                    offs[n_off][0] = f
                    offs[n_off][1] = r
                    offs[n_off][2] = d
                    n_off += 1
    else:
        raise ValueError(f"connectivity must be 6, 18 or 26, got {connectivity}")

    parent_arr = np.arange(F * R * D, dtype=np.int64)
    cdef int64_t[::1] parent = parent_arr
    labels_arr = np.zeros((F, R, D), dtype=np.int32)
    cdef int32_t[:, :, ::1] labels = labels_arr
    cdef int32_t[::1] root_label
    cdef int32_t count = 0

    with nogil:
        for f in range(F):
            for r in range(R):
                for d in range(D):
                    if not mask[f, r, d]:
                        continue
                    i = (f * R + r) * D + d
                    for k in range(n_off):
                        nf = f + offs[k][0]
                        nr = r + offs[k][1]
                        nd = d + offs[k][2]
                        if nf < 0 or nr < 0 or nd < 0 or nr >= R or nd >= D:
                            continue
                        if mask[nf, nr, nd]:
                            j = (nf * R + nr) * D + nd
                            _union(parent, i, j)

    root_label_arr = np.zeros(F * R * D if F * R * D > 0 else 1, dtype=np.int32)
    root_label = root_label_arr
    with nogil:
        for f in range(F):
            for r in range(R):
                for d in range(D):
                    if not mask[f, r, d]:
                        continue
                    i = (f * R + r) * D + d
                    j = _find(parent, i)
                    if j == i:
                        count += 1
                        root_label[i] = count
                    labels[f, r, d] = root_label[j]
    return labels_arr, int(count)
