"""Static PNG renders of frequency slices with mask contours."""
from __future__ import annotations

import numpy as np
from PIL import Image, PngImagePlugin

from .preproc import CLIP_HIGH, CLIP_LOW

GT_COLOR = (0, 255, 0)
PRED_COLOR = (255, 0, 0)


class SliceRangeError(IndexError):
    pass


def to_gray(plane, low=CLIP_LOW, high=CLIP_HIGH):
    """Fixed linear transfer of ``[low, high]`` onto 0..255."""
    x = (np.clip(np.asarray(plane, dtype=np.float64), low, high) - low) / (high - low)
    return np.round(x * 255.0).astype(np.uint8)


def contour(mask2d):
    """Mask pixels with at least one 4-neighbour outside the mask (image edges count as outside)."""
    m = np.asarray(mask2d) != 0
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return m & ~interior


def check_slice(index: int, n_freq: int) -> int:
    if not 0 <= index < n_freq:
        raise SliceRangeError(f"slice {index} outside 0..{n_freq - 1}")
    return index


def render_slice(cube, index, gt=None, pred=None, upscale=4):
    """Return an 8-bit image of frequency plane ``index``.

    Without masks the image is grayscale ("L"); with masks it is RGB with
    ground-truth contours in green and prediction contours in red.
    """
    data = np.asarray(getattr(cube, "data", cube))
    check_slice(index, data.shape[0])
    gray = to_gray(data[index])
    masks = [(m, c) for m, c in ((gt, GT_COLOR), (pred, PRED_COLOR)) if m is not None]
    if not masks:
        img = gray
    else:
        img = np.repeat(gray[:, :, None], 3, axis=2)
        for m, color in masks:
            plane = np.asarray(getattr(m, "data", m))
            if plane.shape != data.shape:
                raise ValueError(f"mask shape {plane.shape} differs from cube {data.shape}")
            img[contour(plane[index])] = color
    if upscale > 1:
        img = np.repeat(np.repeat(img, upscale, axis=0), upscale, axis=1)
    return img


def save_png(array, path, text: dict | None = None) -> None:
    info = PngImagePlugin.PngInfo()
    for key in sorted(text or {}):
        info.add_text(key, str(text[key]))
    Image.fromarray(np.ascontiguousarray(array, dtype=np.uint8)).save(path, pnginfo=info)
