"""Raster scaling, tile geometry and coordinate remapping.

Rasters are ``numpy.ndarray`` of shape ``(H, W, C)`` and dtype ``uint8``.
Three coordinate frames are in play: ``original`` (native capture),
``image`` (the raster after altitude scaling) and ``tile`` (one cut tile).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from PIL import Image


class TilingError(ValueError):
    pass


class Frame(str, enum.Enum):
    TILE = "tile"
    IMAGE = "image"
    ORIGINAL = "original"


@dataclass(frozen=True)
class BoxF:
    """Axis-aligned box, top-left corner plus size, tagged with its frame."""

    x: float
    y: float
    w: float
    h: float
    frame: Frame = Frame.ORIGINAL

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise TilingError(f"negative box size: {self.w}x{self.h}")
        if not isinstance(self.frame, Frame):
            object.__setattr__(self, "frame", Frame(self.frame))

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def as_xywh(self) -> list:
        return [self.x, self.y, self.w, self.h]

    def scaled(self, factor: float, frame: Frame) -> "BoxF":
        return BoxF(self.x * factor, self.y * factor, self.w * factor, self.h * factor, frame)


# --------------------------------------------------------------------------
# rasters
# --------------------------------------------------------------------------


def check_raster(img: np.ndarray) -> None:
    if not isinstance(img, np.ndarray) or img.ndim != 3 or img.dtype != np.uint8:
        raise TilingError("raster must be a uint8 array of shape (H, W, C)")
    h, w, c = img.shape
    if h <= 0 or w <= 0 or c <= 0:
        raise TilingError(f"empty raster {img.shape}")


def read_raster(path: Union[str, Path]) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_raster(img: np.ndarray, path: Union[str, Path]) -> None:
    check_raster(img)
    Image.fromarray(img if img.shape[2] != 1 else img[:, :, 0]).save(path)


def area_weights(n_in: int, n_out: int) -> Tuple[np.ndarray, np.ndarray]:
    """Overlap weights for an exact box-filter downscale along one axis.

    Output sample k averages the input over ``[k*n_in/n_out, (k+1)*n_in/n_out)``.
    Returns ``start`` (first input index per output) and ``weights`` of shape
    ``(taps, n_out)``; tap j applies to input ``start + j``. Integer arithmetic
    (everything scaled by ``n_out``) keeps the boundaries exact.
    """
    taps = -(-n_in // n_out) + 1
    k = np.arange(n_out, dtype=np.int64)
    lo = k * n_in
    hi = lo + n_in
    start = lo // n_out
    weights = np.empty((taps, n_out), dtype=np.float64)
    for j in range(taps):
        i = start + j
        overlap = np.minimum(hi, (i + 1) * n_out) - np.maximum(lo, i * n_out)
        weights[j] = np.where(i < n_in, np.maximum(overlap, 0), 0) / n_in
    return start, weights


def _area_resize_axis0(a: np.ndarray, n_out: int) -> np.ndarray:
    n_in = a.shape[0]
    start, weights = area_weights(n_in, n_out)
    bshape = (n_out,) + (1,) * (a.ndim - 1)
    out = np.zeros((n_out,) + a.shape[1:], dtype=np.float32)
    for j, w in enumerate(weights):
        if not w.any():
            continue
        out += w.astype(np.float32).reshape(bshape) * a[np.minimum(start + j, n_in - 1)]
    return out


def area_resize(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Box-filter downscale to ``out_w x out_h``; rounds to the nearest uint8."""
    check_raster(img)
    h, w, _ = img.shape
    if out_w > w or out_h > h or out_w < 1 or out_h < 1:
        raise TilingError(f"area_resize only downsamples: {w}x{h} -> {out_w}x{out_h}")
    if (out_w, out_h) == (w, h):
        return img.copy()
    res = img
    if out_h != h:
        res = _area_resize_axis0(res, out_h)
    if out_w != w:
        res = _area_resize_axis0(np.swapaxes(res, 0, 1), out_w).swapaxes(0, 1)
    return np.clip(np.rint(res), 0, 255).astype(np.uint8)


def scaled_size(width: int, height: int, target_long_side: int) -> Tuple[int, int, float]:
    """Scaled (w, h) for a long-side target, plus the scale factor."""
    long_side = max(width, height)
    scale = target_long_side / long_side
    if width >= height:
        return target_long_side, max(1, int(round(height * scale))), scale
    return max(1, int(round(width * scale))), target_long_side, scale


def scale_raster(img: np.ndarray, target_long_side: int) -> Tuple[np.ndarray, float]:
    """Downscale so the long side equals ``target_long_side``; aspect kept."""
    check_raster(img)
    h, w, _ = img.shape
    if target_long_side > max(w, h):
        raise TilingError(
            f"refusing to upscale {w}x{h} to long side {target_long_side}"
        )
    if target_long_side < 1:
        raise TilingError("target long side must be >= 1")
    out_w, out_h, scale = scaled_size(w, h, target_long_side)
    return area_resize(img, out_w, out_h), scale


# --------------------------------------------------------------------------
# tile plans
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TileRegion:
    x_off: int
    y_off: int
    width: int
    height: int
    row: int = 0
    col: int = 0

    @property
    def x2(self) -> int:
        return self.x_off + self.width

    @property
    def y2(self) -> int:
        return self.y_off + self.height


@dataclass
class TilePlan:
    image_w: int
    image_h: int
    tile_size_px: int
    overlap_fraction: float
    step_px: int
    n_cols: int
    n_rows: int
    tiles: List[TileRegion] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tiles)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def axis_offsets(length: int, tile: int, step: int) -> List[int]:
    """Tile start offsets along one axis; the last tile is pinned to the edge."""
    if length <= tile:
        return [0]
    n = math.ceil((length - tile) / step) + 1
    offs = [i * step for i in range(n - 1)]
    offs.append(length - tile)
    return offs


def plan_tiles(W: int, H: int, N: int, overlap: float) -> TilePlan:
    """Grid of ``N x N`` tiles, ``round(N*overlap)`` px overlap, row-major."""
    if N <= 0:
        raise TilingError(f"tile size must be positive, got {N}")
    if not 0 <= overlap < 1:
        raise TilingError(f"overlap must be in [0, 1), got {overlap}")
    if W <= 0 or H <= 0:
        raise TilingError(f"image size must be positive, got {W}x{H}")
    step = N - int(round(N * overlap))
    xs = axis_offsets(W, N, step)
    ys = axis_offsets(H, N, step)
    tw, th = min(N, W), min(N, H)
    tiles = [
        TileRegion(x, y, tw, th, row=r, col=c)
        for r, y in enumerate(ys)
        for c, x in enumerate(xs)
    ]
    return TilePlan(W, H, N, float(overlap), step, len(xs), len(ys), tiles)


def grid_plan(W: int, H: int, n_cols: int, n_rows: int) -> TilePlan:
    """Exact ``n_cols x n_rows`` partition (no overlap); sizes differ by at most 1 px."""
    if n_cols < 1 or n_rows < 1:
        raise TilingError("grid needs at least one tile per dimension")
    if n_cols > W or n_rows > H:
        raise TilingError(f"cannot split {W}x{H} into {n_cols}x{n_rows}")
    xs = [c * W // n_cols for c in range(n_cols + 1)]
    ys = [r * H // n_rows for r in range(n_rows + 1)]
    tiles = [
        TileRegion(xs[c], ys[r], xs[c + 1] - xs[c], ys[r + 1] - ys[r], row=r, col=c)
        for r in range(n_rows)
        for c in range(n_cols)
    ]
    size = max(xs[1], ys[1])
    return TilePlan(W, H, size, 0.0, size, n_cols, n_rows, tiles)


def cut_tile(img: np.ndarray, region: TileRegion) -> np.ndarray:
    h, w = img.shape[:2]
    if region.x_off < 0 or region.y_off < 0 or region.x2 > w or region.y2 > h or region.width <= 0 or region.height <= 0:
        raise TilingError(f"region {region} outside {w}x{h} raster")
    return img[region.y_off:region.y2, region.x_off:region.x2].copy()


# --------------------------------------------------------------------------
# coordinate mapping
# --------------------------------------------------------------------------


def to_image_space(box: BoxF, scale_factor: float) -> BoxF:
    """Original-frame box into the scaled image frame."""
    if box.frame is not Frame.ORIGINAL:
        raise TilingError(f"expected an original-frame box, got {box.frame.value}")
    return box.scaled(scale_factor, Frame.IMAGE)


def remap_to_image(box: BoxF, region: TileRegion, scale_factor: float) -> BoxF:
    """Tile-frame box back into the original capture frame."""
    if box.frame is not Frame.TILE:
        raise TilingError(f"expected a tile-frame box, got {box.frame.value}")
    if scale_factor == 0 or not math.isfinite(scale_factor):
        raise TilingError(f"invalid scale factor {scale_factor}")
    return BoxF(
        (box.x + region.x_off) / scale_factor,
        (box.y + region.y_off) / scale_factor,
        box.w / scale_factor,
        box.h / scale_factor,
        Frame.ORIGINAL,
    )


def clip_annotation_to_tile(ann: BoxF, region: TileRegion, min_visibility: float) -> Optional[BoxF]:
    """Intersect an image-frame box with a tile.

    Returns the visible part in tile coordinates, or None when less than
    ``min_visibility`` of the box area falls inside the tile.
    """
    if not 0 <= min_visibility <= 1:
        raise TilingError(f"min_visibility must be in [0, 1], got {min_visibility}")
    if ann.frame is not Frame.IMAGE:
        raise TilingError(f"expected an image-frame box, got {ann.frame.value}")
    x1 = max(ann.x, region.x_off)
    y1 = max(ann.y, region.y_off)
    x2 = min(ann.x2, region.x2)
    y2 = min(ann.y2, region.y2)
    if x2 <= x1 or y2 <= y1 or ann.area <= 0:
        return None
    inter = (x2 - x1) * (y2 - y1)
    if inter / ann.area < min_visibility:
        return None
    return BoxF(x1 - region.x_off, y1 - region.y_off, x2 - x1, y2 - y1, Frame.TILE)
