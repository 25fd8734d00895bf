"""Heat overlays: attribution maps composited over the generated image.

The colormap is a self-contained 256-entry LUT built from 16 hand-picked
anchors running dark violet -> red -> orange -> pale yellow with
monotonically increasing lightness, so ordering survives grayscale
reproduction. No plotting library is involved.

Compositing is straight alpha per pixel with alpha = opacity * heat:
zero heat (or zero opacity) leaves the base pixel untouched, and full
heat at opacity 1 lands exactly on the LUT color.
"""

from __future__ import annotations

import numpy as np

from .heatmap import AttributionMap

# (value position in 0..1, rgb) anchors; interpolated to 256 entries below
_ANCHORS = (
    (0, 0, 4), (12, 8, 38), (34, 12, 71), (60, 9, 101),
    (85, 15, 109), (109, 25, 110), (133, 37, 103), (156, 48, 93),
    (180, 60, 80), (202, 75, 64), (220, 93, 47), (235, 115, 29),
    (245, 140, 11), (250, 168, 14), (249, 197, 51), (252, 255, 164),
)


def _build_lut() -> np.ndarray:
    anchors = np.asarray(_ANCHORS, dtype=np.float64)
    pos = np.linspace(0.0, 1.0, len(anchors))
    t = np.linspace(0.0, 1.0, 256)
    lut = np.empty((256, 3), dtype=np.uint8)
    for ch in range(3):
        lut[:, ch] = np.rint(np.interp(t, pos, anchors[:, ch])).astype(np.uint8)
    return lut


_LUT = _build_lut()


def colormap_lut() -> np.ndarray:
    """The 256x3 uint8 heat LUT (copy; index 0 darkest, 255 brightest)."""
    return _LUT.copy()


def heat_colors(heat: np.ndarray) -> np.ndarray:
    """Map heat in [0, 1] to LUT colors; returns uint8 (..., 3)."""
    heat = np.asarray(heat, dtype=np.float64)
    if heat.size and (not np.isfinite(heat).all()
                      or heat.min() < 0.0 or heat.max() > 1.0):
        raise ValueError("heat values must be finite and lie in [0, 1]")
    idx = np.rint(heat * 255.0).astype(np.intp)
    return _LUT[idx]


def render_overlay(amap: AttributionMap, image: np.ndarray | None = None,
                   opacity: float = 0.6) -> np.ndarray:
    """Composite the map over an RGB image (uint8 HxWx3); returns uint8 HxWx3.

    Without an image, a neutral gray canvas stands in so the heat is still
    readable on its own.
    """
    if not (0.0 <= opacity <= 1.0):
        raise ValueError(f"opacity must lie in [0, 1], got {opacity}")
    h, w = amap.height, amap.width
    if image is None:
        base = np.full((h, w, 3), 128, dtype=np.float64)
    else:
        image = np.asarray(image)
        if image.shape != (h, w, 3):
            raise ValueError(
                f"image shape {image.shape} does not match map {h}x{w}")
        base = image.astype(np.float64)

    color = heat_colors(amap.values).astype(np.float64)
    alpha = (opacity * amap.values)[:, :, None]
    out = np.rint((1.0 - alpha) * base + alpha * color)
    return out.astype(np.uint8)


def load_image_rgb(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def save_overlay_png(amap: AttributionMap, path, image: np.ndarray | None = None,
                     opacity: float = 0.6) -> None:
    from PIL import Image

    Image.fromarray(render_overlay(amap, image, opacity), mode="RGB").save(
        path, format="PNG")
