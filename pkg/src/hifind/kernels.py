"""Backend selection for the volumetric hot loops.

The compiled extension (``hifind._ckernels``) is used when it imports;
otherwise the NumPy versions in ``hifind._pykernels`` take over. Setting
``HIFIND_PURE_PYTHON=1`` forces the fallback.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("HIFIND_PURE_PYTHON", "") != "1":
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def im2col3d(xp, kernel, stride, out_shape):
    """Unfold a padded (N, C, F, R, D) block into (C*kf*kr*kd, N*Fo*Ro*Do) columns."""
    return _impl.im2col3d(np.ascontiguousarray(xp), tuple(kernel), tuple(stride), tuple(out_shape))


def col2im3d(cols, xp_shape, kernel, stride, out_shape):
    """Scatter-add columns back onto a zeroed padded block (adjoint of im2col3d)."""
    return _impl.col2im3d(np.ascontiguousarray(cols), tuple(xp_shape), tuple(kernel), tuple(stride), tuple(out_shape))


def label3d(mask, connectivity=26):
    """Label foreground components; ids follow the first voxel in C order."""
    return _impl.label3d(np.ascontiguousarray(mask, dtype=np.uint8), int(connectivity))
