"""Per-token attribution maps from raw attention records.

The attribution map for token k is the sum, over every recorded
(layer, timestep, head) slice, of that slice's k-th token plane upsampled
to the output image size, followed by a single max-normalization to [0, 1].

Upsampling is bicubic with the classic cubic convolution kernel
(a = -0.75 by default), half-pixel center alignment, and edge replication.
Bicubic overshoot can produce small negative values; those are clamped to
zero per record, before summation, so the accumulated map stays a sum of
non-negative planes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

from .dump import AttentionDump

MAP_MAGIC = b"DMAP"

ALIGN_HALF_PIXEL = "half_pixel_centers"
KERNEL_CUBIC = "cubic"


class UpsampleError(ValueError):
    pass


class MapFormatError(Exception):
    pass


@dataclass(frozen=True)
class UpsampleSpec:
    """How attention planes are resized to image resolution."""

    kernel: str = KERNEL_CUBIC
    kernel_a: float = -0.75
    alignment: str = ALIGN_HALF_PIXEL
    clamp_negative: bool = True

    def __post_init__(self):
        if self.kernel != KERNEL_CUBIC:
            raise UpsampleError(f"unsupported kernel {self.kernel!r}")
        if self.alignment != ALIGN_HALF_PIXEL:
            raise UpsampleError(f"unsupported alignment {self.alignment!r}")
        if not (self.kernel_a < 0):
            raise UpsampleError(f"kernel_a must be negative, got {self.kernel_a}")


def cubic_kernel(x, a: float = -0.75):
    """Cubic convolution weight W(x); vectorized over x."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    near = (a + 2.0) * x ** 3 - (a + 3.0) * x ** 2 + 1.0
    far = a * x ** 3 - 5.0 * a * x ** 2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def _axis_taps(src_len: int, dst_len: int, a: float):
    """Clamped source indices (dst_len, 4) and weights (dst_len, 4) for one axis."""
    scale = src_len / dst_len
    centers = (np.arange(dst_len, dtype=np.float64) + 0.5) * scale - 0.5
    base = np.floor(centers)
    t = centers - base
    # taps at base-1 .. base+2; weight of tap base+k is W(t - k)
    offsets = np.arange(-1, 3, dtype=np.float64)
    weights = cubic_kernel(t[:, None] - offsets[None, :], a)
    idx = base[:, None].astype(np.int64) + offsets[None, :].astype(np.int64)
    idx = np.clip(idx, 0, src_len - 1)
    return idx, weights


def _upsample_nd(arr: np.ndarray, dst_h: int, dst_w: int,
                 spec: UpsampleSpec) -> np.ndarray:
    """Bicubic resize along the first two axes of a 2-D or 3-D float array."""
    src_h, src_w = arr.shape[0], arr.shape[1]
    if src_h < 1 or src_w < 1:
        raise UpsampleError(f"source must be non-empty, got {arr.shape}")
    if dst_h < src_h or dst_w < src_w:
        raise UpsampleError(
            f"target {dst_h}x{dst_w} smaller than source {src_h}x{src_w}; "
            "only upsampling is supported")

    work = np.asarray(arr, dtype=np.float64)
    ry, wy = _axis_taps(src_h, dst_h, spec.kernel_a)
    rx, wx = _axis_taps(src_w, dst_w, spec.kernel_a)

    # rows first: (dst_h, src_w[, n])
    extra = (1,) * (work.ndim - 2)
    tmp = np.zeros((dst_h,) + work.shape[1:], dtype=np.float64)
    for k in range(4):
        tmp += wy[:, k].reshape(-1, *(1,) * (work.ndim - 1)) * work[ry[:, k]]
    out = np.zeros((dst_h, dst_w) + work.shape[2:], dtype=np.float64)
    for k in range(4):
        out += wx[:, k].reshape(1, -1, *extra) * tmp[:, rx[:, k]]

    if spec.clamp_negative:
        np.maximum(out, 0.0, out=out)
    return out


def bicubic_upsample(grid: np.ndarray, dst_h: int, dst_w: int,
                     spec: UpsampleSpec = UpsampleSpec()) -> np.ndarray:
    """Resize a 2-D grid to (dst_h, dst_w); returns float64."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise UpsampleError(f"expected a 2-D grid, got shape {grid.shape}")
    return _upsample_nd(grid, dst_h, dst_w, spec)


@dataclass
class AttributionMap:
    """Normalized per-token (or fused per-span) heat over the output image."""

    values: np.ndarray  # float64 in [0, 1], shape (height, width)
    span: tuple[int, int]  # inclusive token index range this map covers
    degenerate: bool = False  # True when the raw sum was identically zero

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def aggregate_raw(dump: AttentionDump, token_indices: Sequence[int],
                  spec: UpsampleSpec = UpsampleSpec()) -> np.ndarray:
    """Un-normalized sum of upsampled planes for a set of token indices.

    Each token plane is upsampled (and clamped) on its own before anything
    is summed, so a fused span is exactly the sum of its per-token raw maps.
    Records are processed in (timestep, layer_id, head) order so the
    accumulation order never depends on how the dump was assembled.
    """
    n = dump.n_tokens
    for k in token_indices:
        if not (0 <= k < n):
            raise IndexError(f"token index {k} outside [0, {n})")
    idx = list(token_indices)
    acc = np.zeros((dump.image_height, dump.image_width), dtype=np.float64)
    order = sorted(range(len(dump.records)),
                   key=lambda i: (dump.records[i].timestep,
                                  dump.records[i].layer_id,
                                  dump.records[i].head))
    for i in order:
        rec = dump.records[i]
        up = _upsample_nd(rec.values[:, :, idx], dump.image_height,
                          dump.image_width, spec)
        acc += up.sum(axis=2)
    return acc


def normalize_map(raw: np.ndarray, span: tuple[int, int]) -> AttributionMap:
    """Max-normalize a non-negative raw accumulation into an AttributionMap."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.isfinite(raw).all():
        raise ValueError("raw map contains non-finite values")
    if (raw < 0).any():
        raise ValueError("raw map contains negative values; clamp before normalizing")
    peak = float(raw.max()) if raw.size else 0.0
    if peak == 0.0:
        return AttributionMap(values=np.zeros_like(raw), span=span, degenerate=True)
    return AttributionMap(values=raw / peak, span=span, degenerate=False)


def token_map(dump: AttentionDump, token_index: int,
              spec: UpsampleSpec = UpsampleSpec()) -> AttributionMap:
    """Attribution map of a single token."""
    raw = aggregate_raw(dump, [token_index], spec)
    return normalize_map(raw, (token_index, token_index))


def fused_map(dump: AttentionDump, span: tuple[int, int],
              spec: UpsampleSpec = UpsampleSpec(),
              special_flags: Sequence[bool] | None = None) -> AttributionMap:
    """Attribution map of a token span, fused by summing raw maps first.

    The sum happens before the single normalization, so a one-token span is
    identical to token_map. ``special_flags`` (one bool per dump token), when
    given, guards against fusing over special tokens.
    """
    start, end = span
    if start > end:
        raise ValueError(f"span [{start}, {end}] is empty")
    if not (0 <= start and end < dump.n_tokens):
        raise IndexError(f"span [{start}, {end}] outside [0, {dump.n_tokens})")
    if special_flags is not None:
        for i in range(start, end + 1):
            if special_flags[i]:
                raise ValueError(f"span [{start}, {end}] covers special token {i}")
    raw = aggregate_raw(dump, range(start, end + 1), spec)
    return normalize_map(raw, span)


# --- flat map export -------------------------------------------------------

def write_map_binary(amap: AttributionMap, destination: BinaryIO) -> None:
    """Magic "DMAP", u32 width, u32 height, then width*height f32 row-major."""
    destination.write(MAP_MAGIC)
    destination.write(struct.pack("<II", amap.width, amap.height))
    destination.write(np.ascontiguousarray(amap.values, dtype="<f4").tobytes())


def read_map_binary(source: BinaryIO) -> np.ndarray:
    magic = source.read(4)
    if magic != MAP_MAGIC:
        raise MapFormatError(f"bad map magic {magic!r}")
    width, height = struct.unpack("<II", source.read(8))
    data = source.read(width * height * 4)
    if len(data) != width * height * 4:
        raise MapFormatError("truncated map payload")
    return np.frombuffer(data, dtype="<f4").reshape(height, width).astype(np.float64)


def write_map_png(amap: AttributionMap, path) -> None:
    """8-bit grayscale PNG of the map (0 -> black, 1 -> white)."""
    from PIL import Image

    gray = np.round(np.clip(amap.values, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(gray, mode="L").save(path, format="PNG")
