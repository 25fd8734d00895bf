import numpy as np
import pytest

from attnsep.heatmap import AttributionMap
from attnsep.overlay import (colormap_lut, heat_colors, load_image_rgb,
                             render_overlay, save_overlay_png)


def _amap(values):
    values = np.asarray(values, dtype=np.float64)
    return AttributionMap(values=values, span=(0, 0),
                          degenerate=bool(values.size and values.max() == 0))


def test_lut_shape_and_ordering():
    lut = colormap_lut()
    assert lut.shape == (256, 3) and lut.dtype == np.uint8
    # perceptual ordering: luminance strictly grows along the ramp ends
    lum = 0.2126 * lut[:, 0] + 0.7152 * lut[:, 1] + 0.0722 * lut[:, 2]
    assert lum[0] < 10
    assert lum[255] > 200
    # monotone non-decreasing within rounding slack
    assert (np.diff(lum) > -1.0).all()


def test_heat_colors_ends():
    lut = colormap_lut()
    np.testing.assert_array_equal(heat_colors(np.array([[0.0]]))[0, 0], lut[0])
    np.testing.assert_array_equal(heat_colors(np.array([[1.0]]))[0, 0], lut[255])
    with pytest.raises(ValueError):
        heat_colors(np.array([[1.5]]))
    with pytest.raises(ValueError):
        heat_colors(np.array([[np.nan]]))


def test_zero_map_leaves_image_unchanged():
    rng = np.random.default_rng(0)
    image = rng.integers(0, 256, (6, 8, 3), dtype=np.uint8)
    out = render_overlay(_amap(np.zeros((6, 8))), image, opacity=0.9)
    np.testing.assert_array_equal(out, image)


def test_zero_opacity_leaves_image_unchanged():
    rng = np.random.default_rng(1)
    image = rng.integers(0, 256, (5, 5, 3), dtype=np.uint8)
    out = render_overlay(_amap(rng.random((5, 5))), image, opacity=0.0)
    np.testing.assert_array_equal(out, image)


def test_full_heat_full_opacity_hits_lut_color():
    image = np.zeros((3, 3, 3), dtype=np.uint8)
    out = render_overlay(_amap(np.ones((3, 3))), image, opacity=1.0)
    np.testing.assert_array_equal(out, np.broadcast_to(colormap_lut()[255],
                                                       (3, 3, 3)))


def test_partial_alpha_blend_value():
    image = np.full((1, 1, 3), 100, dtype=np.uint8)
    heat = np.array([[0.5]])
    out = render_overlay(_amap(heat), image, opacity=0.5)
    color = colormap_lut()[round(0.5 * 255)]
    want = np.rint(0.75 * 100 + 0.25 * color).astype(np.uint8)
    np.testing.assert_array_equal(out[0, 0], want)


def test_gray_canvas_when_no_image():
    out = render_overlay(_amap(np.zeros((4, 4))))
    np.testing.assert_array_equal(out, np.full((4, 4, 3), 128, np.uint8))


def test_guards():
    with pytest.raises(ValueError):
        render_overlay(_amap(np.zeros((4, 4))), opacity=1.2)
    with pytest.raises(ValueError):
        render_overlay(_amap(np.zeros((4, 4))),
                       np.zeros((5, 4, 3), dtype=np.uint8))


def test_png_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    image = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
    amap = _amap(rng.random((8, 8)))
    path = tmp_path / "overlay.png"
    save_overlay_png(amap, path, image, opacity=0.7)
    back = load_image_rgb(path)
    np.testing.assert_array_equal(back, render_overlay(amap, image, 0.7))
