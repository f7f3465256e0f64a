"""Sliding-window inference over whole scenes."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .model import GDSRModel, infer_patch
from .raster import GuideRaster, HeightRaster, bicubic_resample, normalize_guide


def tile_starts(length: int, tile: int, overlap: int) -> list[int]:
    if length <= tile:
        return [0]
    stride = tile - overlap
    starts = list(range(0, length - tile, stride))
    starts.append(length - tile)
    return starts


def window_1d(size: int, ramp_start: bool, ramp_end: bool, overlap: int) -> np.ndarray:
    """Raised-cosine taper over ``overlap`` samples on the sides that touch another tile.

    The taper never reaches zero, so every covered pixel keeps a positive weight.
    """
    w = np.ones(size)
    n = min(overlap, size)
    if n > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * (np.arange(n) + 0.5) / n)
        if ramp_start:
            w[:n] = np.minimum(w[:n], ramp)
        if ramp_end:
            w[size - n:] = np.minimum(w[size - n:], ramp[::-1])
    return w


def tile_grid(shape: tuple[int, int], tile: int, overlap: int) -> list[tuple[int, int, int, int, np.ndarray]]:
    """``(row, col, height, width, weight)`` for every tile in row-major order."""
    h, w = shape
    rows = tile_starts(h, tile, overlap)
    cols = tile_starts(w, tile, overlap)
    th, tw = min(tile, h), min(tile, w)
    out = []
    for i, r in enumerate(rows):
        wy = window_1d(th, i > 0, i < len(rows) - 1, overlap)
        for j, c in enumerate(cols):
            wx = window_1d(tw, j > 0, j < len(cols) - 1, overlap)
            out.append((r, c, th, tw, np.outer(wy, wx)))
    return out


def blend_weight_maps(shape: tuple[int, int], tile: int, overlap: int) -> list[np.ndarray]:
    """Full-size normalized weight map of each tile; they sum to one everywhere."""
    grid = tile_grid(shape, tile, overlap)
    total = np.zeros(shape)
    for r, c, th, tw, wt in grid:
        total[r:r + th, c:c + tw] += wt
    maps = []
    for r, c, th, tw, wt in grid:
        m = np.zeros(shape)
        m[r:r + th, c:c + tw] = wt / total[r:r + th, c:c + tw]
        maps.append(m)
    return maps


def tiled_apply(
    bicubic: np.ndarray, guide_norm: np.ndarray, fn, tile: int, overlap: int
) -> np.ndarray:
    """Apply ``fn(bicubic_tile, guide_tile)`` per tile and blend.

    Tiles are folded into a running weighted mean in tile-index order, which
    is deterministic and reproduces identical overlapping content exactly.
    """
    out = np.zeros(bicubic.shape)
    wsum = np.zeros(bicubic.shape)
    for r, c, th, tw, wt in tile_grid(bicubic.shape, tile, overlap):
        y = fn(bicubic[r:r + th, c:c + tw], guide_norm[:, r:r + th, c:c + tw])
        acc = wsum[r:r + th, c:c + tw] + wt
        cur = out[r:r + th, c:c + tw]
        out[r:r + th, c:c + tw] = cur + (wt / acc) * (y - cur)
        wsum[r:r + th, c:c + tw] = acc
    return out


def infer(
    model: GDSRModel,
    lr_dsm: HeightRaster,
    guide: GuideRaster,
    mode: str = "full",
    *,
    tile_size: int | None = None,
    tile_overlap: int | None = None,
) -> HeightRaster:
    cfg = model.config
    factor = cfg.degradation.factor
    if (lr_dsm.height * factor, lr_dsm.width * factor) != guide.shape:
        raise ShapeError(
            f"LR {lr_dsm.shape} x{factor} does not match guide {guide.shape}; "
            f"the model was trained for factor {factor}"
        )
    tile = tile_size or cfg.tile_size
    overlap = cfg.tile_overlap if tile_overlap is None else tile_overlap
    if not 0 <= overlap < tile:
        raise ShapeError(f"tile overlap {overlap} must lie in [0, {tile})")
    up = bicubic_resample(lr_dsm, guide.height, guide.width)
    if mode == "bicubic_only":
        return up
    gn = normalize_guide(guide, model.stats).values
    values = tiled_apply(up.values, gn, lambda b, g: infer_patch(model, b, g, mode), tile, overlap)
    return HeightRaster(values, up.cell_size)
