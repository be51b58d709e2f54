"""Independent reference implementations used only by the tests.

They are deliberately naive (explicit loops, BFS) so that they share no code
paths with the optimised package kernels.
"""
from collections import deque
from itertools import product
import math

import numpy as np


def neighbor_offsets(connectivity):
    offs = []
    for d in product((-1, 0, 1), repeat=3):
        k = sum(abs(v) for v in d)
        if k == 0:
            continue
        if connectivity == 6 and k > 1:
            continue
        if connectivity == 18 and k > 2:
            continue
        offs.append(d)
    return offs


def flood_fill_labels(mask, connectivity):
    """BFS labelling; labels follow raster order of each component's first voxel.

    Works on a one-voxel padded copy addressed by flat index so the inner
    loop needs no bounds checks.
    """
    mask = np.asarray(mask) != 0
    shape = mask.shape
    padded = np.pad(mask, 1).ravel().tolist()
    ps = (shape[0] + 2, shape[1] + 2, shape[2] + 2)
    steps = [dz * ps[1] * ps[2] + dy * ps[2] + dx for dz, dy, dx in neighbor_offsets(connectivity)]
    lab = [0] * len(padded)
    n = 0
    for z, y, x in zip(*np.nonzero(mask)):
        start = (z + 1) * ps[1] * ps[2] + (y + 1) * ps[2] + (x + 1)
        if lab[start]:
            continue
        n += 1
        lab[start] = n
        queue = deque([start])
        while queue:
            i = queue.popleft()
            for s in steps:
                j = i + s
                if padded[j] and not lab[j]:
                    lab[j] = n
                    queue.append(j)
    labels = np.array(lab, dtype=np.int64).reshape(ps)[1:-1, 1:-1, 1:-1]
    return labels, n


def rebin_column(col):
    """Window-6 stride-4 means of one spectrum, by explicit slicing."""
    out = []
    j = 0
    while 4 * j + 6 <= len(col):
        out.append(sum(float(v) for v in col[4 * j : 4 * j + 6]) / 6.0)
        j += 1
    return np.array(out)


def conv3d_direct(x, w, b, padding):
    """Cross-correlation by summing shifted input slices (N, C, F, R, D)."""
    n, c, *sp = x.shape
    co, ci, kf, kr, kd = w.shape
    pf, pr, pd = padding
    xp = np.pad(x, ((0, 0), (0, 0), (pf, pf), (pr, pr), (pd, pd)))
    of, orr, od = xp.shape[2] - kf + 1, xp.shape[3] - kr + 1, xp.shape[4] - kd + 1
    out = np.zeros((n, co, of, orr, od))
    for a in range(kf):
        for bb in range(kr):
            for e in range(kd):
                patch = xp[:, :, a : a + of, bb : bb + orr, e : e + od]
                out += np.einsum("ncfrd,oc->nofrd", patch, w[:, :, a, bb, e])
    if b is not None:
        out += np.asarray(b)[None, :, None, None, None]
    return out


def conv_transpose_direct(x, w, b):
    """Factor-2 transposed convolution with kernel = stride = 2, by scattering."""
    n, ci, f, r, d = x.shape
    co = w.shape[1]
    out = np.zeros((n, co, 2 * f, 2 * r, 2 * d))
    for a, bb, e in product(range(2), repeat=3):
        out[:, :, a::2, bb::2, e::2] += np.einsum("ncfrd,co->nofrd", x, w[:, :, a, bb, e])
    if b is not None:
        out += np.asarray(b)[None, :, None, None, None]
    return out


def dice_loss_formula(p, y, eps=1e-5):
    p, y = np.asarray(p, float).reshape(len(p), -1), np.asarray(y, float).reshape(len(y), -1)
    per = (2 * (p * y).sum(1) + eps) / (y.sum(1) + p.sum(1) + eps)
    return 1 - per.mean()


def bce_formula(p, y):
    p = np.clip(np.asarray(p, float), 1e-7, 1 - 1e-7)
    y = np.asarray(y, float)
    return -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))


def combined_half_ones():
    """Dice + 0.5 BCE at prediction 0.5 and an all-ones target, in closed form.

    Dice term: 1 - N / (1.5 N) = 1/3 (eps negligible); BCE term: ln 2.
    """
    return 1.0 / 3.0 + 0.5 * math.log(2.0)


def unetlk_parameter_count(base, kernel=(7, 3, 3), cin=1, cout=1):
    """Closed-form parameter count of the four-level network."""
    k = kernel[0] * kernel[1] * kernel[2]
    w = [base * 2**i for i in range(4)]

    def block(ci, co):
        return (ci * co * k + co) + (co * co * k + co) + 4 * co

    total = block(cin, w[0]) + block(w[0], w[1]) + block(w[1], w[2]) + block(w[2], w[3])
    for i in range(3):
        total += w[i + 1] * w[i] * 8 + w[i]
        total += block(2 * w[i], w[i])
    return total + w[0] * cout + cout


# Published detection counts with their rounded recall and precision percentages
PUBLISHED_COUNTS = {
    "Unet-LK": {"tp": 337, "fp": 15, "n_gt": 368, "recall": 91.6, "precision": 95.7},
    "SoFiA": {"tp": 236, "fp": 10036, "n_gt": 368, "recall": 64.2, "precision": 2.3},
}
