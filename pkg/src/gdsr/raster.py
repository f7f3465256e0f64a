"""Raster containers, normalization, bicubic resampling and the GDSR file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateDataError,
    InvalidInputError,
    RasterFormatError,
    ShapeError,
    UnsupportedInputError,
)

MAGIC = b"GDSR"
FORMAT_VERSION = 1
KIND_HEIGHT = 0
KIND_GUIDE = 1
# magic, version u32, kind u8, channels u16, height u32, width u32, cell_size f64
_HEADER = struct.Struct("<4sIBHIId")
_MAX_PIXELS = 1 << 31


@dataclass
class HeightRaster:
    """Single-band height grid in meters.

    ``values`` is a 2-D float64 array indexed ``[row, col]``.
    """

    values: np.ndarray
    cell_size: float = 1.0
    nodata_mask: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"height raster must be 2-D, got shape {self.values.shape}")
        if not self.cell_size > 0:
            raise InvalidInputError(f"cell_size must be positive, got {self.cell_size}")
        if self.nodata_mask is not None:
            self.nodata_mask = np.asarray(self.nodata_mask, dtype=bool)
            if self.nodata_mask.shape != self.values.shape:
                raise ShapeError(
                    f"nodata mask {self.nodata_mask.shape} does not match values {self.values.shape}"
                )
            if not self.nodata_mask.any():
                self.nodata_mask = None
        valid = self.values if self.nodata_mask is None else self.values[~self.nodata_mask]
        if not np.all(np.isfinite(valid)):
            raise InvalidInputError("height raster contains non-finite unmasked values")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def valid_mask(self) -> np.ndarray:
        if self.nodata_mask is None:
            return np.ones(self.shape, dtype=bool)
        return ~self.nodata_mask


@dataclass
class GuideRaster:
    """Multi-channel guide image, stored channel-first as ``[C, H, W]``."""

    values: np.ndarray
    cell_size: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 2:
            values = values[None]
        if values.ndim != 3 or values.shape[0] < 1:
            raise ShapeError(f"guide raster must be [C, H, W], got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("guide raster contains non-finite values")
        if not self.cell_size > 0:
            raise InvalidInputError(f"cell_size must be positive, got {self.cell_size}")
        self.values = values

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1:]


@dataclass(frozen=True)
class NormStats:
    dsm_global_std: float
    guide_channel_mean: tuple[float, ...]
    guide_channel_std: tuple[float, ...]

    def __post_init__(self):
        if not self.dsm_global_std > 0:
            raise DegenerateDataError(f"dsm_global_std must be positive, got {self.dsm_global_std}")
        if len(self.guide_channel_mean) != len(self.guide_channel_std):
            raise InvalidInputError("guide mean/std channel counts differ")
        if not all(s > 0 for s in self.guide_channel_std):
            raise DegenerateDataError("guide channel std must be positive")

    @property
    def channels(self) -> int:
        return len(self.guide_channel_mean)


@dataclass
class NormalizedPatch:
    values: np.ndarray
    local_mean: float
    stats: NormStats
    cell_size: float = 1.0


# --------------------------------------------------------------------------
# Normalization


def compute_norm_stats(
    train_dsms: Sequence[HeightRaster], train_guides: Sequence[GuideRaster]
) -> NormStats:
    """Global DSM std and per-channel guide mean/std over all training pixels.

    Population statistics, accumulated in float64 with a two-pass scheme.
    """
    if not train_dsms or not train_guides:
        raise InvalidInputError("need at least one training DSM and one guide")
    heights = np.concatenate([d.values[d.valid_mask()] for d in train_dsms])
    if heights.size == 0:
        raise InvalidInputError("training DSMs contain no valid pixels")
    dsm_std = float(np.std(heights))
    if not dsm_std > 0:
        raise DegenerateDataError("training DSM pixels have zero variance")

    channels = {g.channels for g in train_guides}
    if len(channels) != 1:
        raise ShapeError(f"guides have inconsistent channel counts {sorted(channels)}")
    pix = np.concatenate([g.values.reshape(g.channels, -1) for g in train_guides], axis=1)
    mean = pix.mean(axis=1)
    std = pix.std(axis=1)
    if not np.all(std > 0):
        raise DegenerateDataError(f"guide channel(s) {np.flatnonzero(std <= 0).tolist()} have zero variance")
    return NormStats(dsm_std, tuple(mean.tolist()), tuple(std.tolist()))


def normalize_dsm_patch(patch: HeightRaster, stats: NormStats) -> NormalizedPatch:
    local_mean = float(patch.values.mean())
    values = (patch.values - local_mean) / stats.dsm_global_std
    return NormalizedPatch(values, local_mean, stats, patch.cell_size)


def denormalize_dsm_patch(patch: NormalizedPatch) -> HeightRaster:
    return HeightRaster(
        patch.values * patch.stats.dsm_global_std + patch.local_mean, patch.cell_size
    )


def normalize_guide(guide: GuideRaster, stats: NormStats) -> GuideRaster:
    if guide.channels != stats.channels:
        raise ShapeError(f"guide has {guide.channels} channels, stats have {stats.channels}")
    mean = np.asarray(stats.guide_channel_mean)[:, None, None]
    std = np.asarray(stats.guide_channel_std)[:, None, None]
    return GuideRaster((guide.values - mean) / std, guide.cell_size)


# --------------------------------------------------------------------------
# Bicubic resampling


def cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def source_coords(n_in: int, n_out: int, align_corners: bool = False) -> np.ndarray:
    """Input-grid coordinate of every output sample.

    Computed from integer numerators so that aligned samples land on exact
    integers.
    """
    i = np.arange(n_out, dtype=np.int64)
    if align_corners:
        if n_out == 1:
            return np.zeros(1)
        return (i * (n_in - 1)) / (n_out - 1)
    # (i + 0.5) * n_in / n_out - 0.5
    return ((2 * i + 1) * n_in - n_out) / (2 * n_out)


def resample_matrix(n_in: int, n_out: int, align_corners: bool = False, a: float = -0.5) -> np.ndarray:
    """Dense ``[n_out, n_in]`` interpolation matrix with clamp-to-edge borders."""
    u = source_coords(n_in, n_out, align_corners)
    base = np.floor(u).astype(np.int64)
    frac = u - base
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for k in (-1, 0, 1, 2):
        w = cubic_kernel(frac - k, a)
        idx = np.clip(base + k, 0, n_in - 1)
        np.add.at(m, (rows, idx), w)
    return m


def bicubic_array(values: np.ndarray, out_height: int, out_width: int, align_corners: bool = False) -> np.ndarray:
    """Resample the trailing two axes of ``values``."""
    my = resample_matrix(values.shape[-2], out_height, align_corners)
    mx = resample_matrix(values.shape[-1], out_width, align_corners)
    return my @ values @ mx.T


def bicubic_resample(
    src: HeightRaster, out_height: int, out_width: int, align_corners: bool = False
) -> HeightRaster:
    if src.values.size == 0:
        raise InvalidInputError("cannot resample an empty raster")
    if out_height < 1 or out_width < 1:
        raise InvalidInputError(f"output dims must be >= 1, got {out_height}x{out_width}")
    if src.nodata_mask is not None:
        raise UnsupportedInputError("bicubic resampling does not accept nodata pixels")
    out = bicubic_array(src.values, out_height, out_width, align_corners)
    return HeightRaster(out, src.cell_size * src.width / out_width)


# --------------------------------------------------------------------------
# File I/O


def write_raster(raster: HeightRaster | GuideRaster, path: str | Path) -> None:
    if isinstance(raster, HeightRaster):
        if raster.nodata_mask is not None:
            raise UnsupportedInputError("the GDSR format has no nodata encoding")
        kind, channels = KIND_HEIGHT, 1
        payload = raster.values.astype("<f4")
    elif isinstance(raster, GuideRaster):
        kind, channels = KIND_GUIDE, raster.channels
        payload = np.moveaxis(raster.values, 0, -1).astype("<f4")
    else:
        raise TypeError(f"cannot write {type(raster).__name__}")
    h, w = raster.shape
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, kind, channels, h, w, float(raster.cell_size))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(payload).tobytes())


def decode_raster(buf: bytes) -> HeightRaster | GuideRaster:
    if len(buf) < _HEADER.size:
        raise RasterFormatError(f"truncated header: {len(buf)} of {_HEADER.size} bytes", len(buf))
    magic, version, kind, channels, h, w, cell = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise RasterFormatError(f"bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise RasterFormatError(f"unsupported version {version}", 4)
    if kind not in (KIND_HEIGHT, KIND_GUIDE):
        raise RasterFormatError(f"unknown raster kind {kind}", 8)
    if channels < 1 or (kind == KIND_HEIGHT and channels != 1):
        raise RasterFormatError(f"invalid channel count {channels} for kind {kind}", 9)
    n = h * w * channels
    if h == 0 or w == 0 or n >= _MAX_PIXELS:
        raise RasterFormatError(f"invalid dimensions {h}x{w}x{channels}", 11)
    if not (np.isfinite(cell) and cell > 0):
        raise RasterFormatError(f"invalid cell size {cell}", 19)
    expected = _HEADER.size + 4 * n
    if len(buf) < expected:
        raise RasterFormatError(
            f"truncated payload: expected {4 * n} bytes, found {len(buf) - _HEADER.size}", len(buf)
        )
    if len(buf) > expected:
        raise RasterFormatError(f"{len(buf) - expected} trailing bytes", expected)
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=_HEADER.size).astype(np.float64)
    if kind == KIND_HEIGHT:
        return HeightRaster(data.reshape(h, w), cell)
    return GuideRaster(np.moveaxis(data.reshape(h, w, channels), -1, 0), cell)


def read_raster(path: str | Path) -> HeightRaster | GuideRaster:
    return decode_raster(Path(path).read_bytes())


def read_png_guide(path: str | Path, cell_size: float = 1.0) -> GuideRaster:
    """Import an 8-bit PNG as a guide with values scaled to [0, 1]."""
    from PIL import Image

    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.dtype != np.uint8:
        raise UnsupportedInputError(f"only 8-bit PNGs are supported, got {arr.dtype}")
    if arr.ndim == 2:
        arr = arr[..., None]
    return GuideRaster(np.moveaxis(arr, -1, 0) / 255.0, cell_size)
