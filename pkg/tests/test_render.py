import numpy as np
import pytest
from PIL import Image

from hifind.render import SliceRangeError, contour, render_slice, save_png, to_gray


def test_zero_cube_renders_uniform():
    img = render_slice(np.zeros((4, 6, 5), np.float32), 2, upscale=3)
    assert img.shape == (18, 15) and img.dtype == np.uint8
    assert len(np.unique(img)) == 1 and img[0, 0] == round(0.3 * 255)


def test_fixed_transfer():
    assert to_gray(np.array([-100.0, -15.0, 35.0, 100.0])).tolist() == [0, 0, 255, 255]


def test_contour_nonempty_iff_mask_intersects_slice():
    cube = np.zeros((5, 8, 8), np.float32)
    gt = np.zeros(cube.shape, np.uint8)
    gt[2, 2:6, 2:6] = 1
    for k in range(5):
        img = render_slice(cube, k, gt=gt, upscale=1)
        green = np.all(img == (0, 255, 0), axis=-1).sum()
        assert (green > 0) == bool(gt[k].any())
    assert contour(gt[2]).sum() == 12
    full = np.ones((3, 3), np.uint8)
    assert contour(full).sum() == 8


def test_gt_and_prediction_colours():
    cube = np.zeros((1, 6, 6), np.float32)
    gt = np.zeros(cube.shape, np.uint8)
    pred = np.zeros(cube.shape, np.uint8)
    gt[0, 0, 0] = 1
    pred[0, 5, 5] = 1
    img = render_slice(cube, 0, gt=gt, pred=pred, upscale=1)
    assert tuple(img[0, 0]) == (0, 255, 0) and tuple(img[5, 5]) == (255, 0, 0)


def test_out_of_range_slice():
    with pytest.raises(SliceRangeError):
        render_slice(np.zeros((4, 2, 2)), 4)
    with pytest.raises(SliceRangeError):
        render_slice(np.zeros((4, 2, 2)), -1)


def test_png_text_chunks(tmp_path):
    save_png(np.zeros((4, 4), np.uint8), tmp_path / "a.png", {"seed": "5", "config_hash": "ab"})
    with Image.open(tmp_path / "a.png") as im:
        assert im.mode == "L" and im.text == {"config_hash": "ab", "seed": "5"}
