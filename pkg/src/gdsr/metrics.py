"""Per-pixel error metrics for height rasters and line profiles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ShapeError
from .raster import HeightRaster

NMAD_SCALE = 1.4826


@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    nmad: float
    medae: float
    n_pixels: int

    CSV_HEADER = "rmse,nmad,medae,n_pixels"

    def to_csv_line(self) -> str:
        return f"{self.rmse!r},{self.nmad!r},{self.medae!r},{self.n_pixels}"

    @classmethod
    def from_csv_line(cls, line: str) -> MetricsReport:
        rmse, nmad, medae, n = line.strip().split(",")
        return cls(float(rmse), float(nmad), float(medae), int(n))


def _errors(pred, gt) -> np.ndarray:
    """Signed errors ``pred - gt`` over pixels valid in both inputs."""
    pv = pred.values if isinstance(pred, HeightRaster) else np.asarray(pred, dtype=np.float64)
    gv = gt.values if isinstance(gt, HeightRaster) else np.asarray(gt, dtype=np.float64)
    if pv.shape != gv.shape:
        raise ShapeError(f"prediction {pv.shape} and ground truth {gv.shape} differ")
    valid = np.ones(pv.shape, dtype=bool)
    for r in (pred, gt):
        if isinstance(r, HeightRaster) and r.nodata_mask is not None:
            valid &= ~r.nodata_mask
    d = (pv - gv)[valid]
    if d.size == 0:
        raise InvalidInputError("no valid pixels to evaluate")
    return d


def _rms(d: np.ndarray) -> float:
    # factor out the largest error so tiny differences cannot underflow to 0
    m = float(np.abs(d).max())
    if m == 0.0 or not np.isfinite(m):
        return m
    s = d / m
    return m * float(np.sqrt(np.mean(s * s)))


def rmse(pred, gt) -> float:
    return _rms(_errors(pred, gt))


def nmad(pred, gt) -> float:
    d = _errors(pred, gt)
    return float(NMAD_SCALE * np.median(np.abs(d - np.median(d))))


def medae(pred, gt) -> float:
    return float(np.median(np.abs(_errors(pred, gt))))


def evaluate_pair(pred, gt) -> MetricsReport:
    d = _errors(pred, gt)
    return MetricsReport(
        rmse=_rms(d),
        nmad=float(NMAD_SCALE * np.median(np.abs(d - np.median(d)))),
        medae=float(np.median(np.abs(d))),
        n_pixels=int(d.size),
    )


def mean_report(reports: list[MetricsReport]) -> MetricsReport:
    if not reports:
        raise InvalidInputError("no reports to aggregate")
    return MetricsReport(
        rmse=float(np.mean([r.rmse for r in reports])),
        nmad=float(np.mean([r.nmad for r in reports])),
        medae=float(np.mean([r.medae for r in reports])),
        n_pixels=int(np.sum([r.n_pixels for r in reports])),
    )


def bilinear_sample(values: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    h, w = values.shape
    r0 = np.clip(np.floor(rows).astype(int), 0, max(h - 2, 0))
    c0 = np.clip(np.floor(cols).astype(int), 0, max(w - 2, 0))
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = rows - r0
    fc = cols - c0
    top = values[r0, c0] * (1 - fc) + values[r0, c1] * fc
    bottom = values[r1, c0] * (1 - fc) + values[r1, c1] * fc
    return top * (1 - fr) + bottom * fr


def line_profile(
    raster: HeightRaster, p0: tuple[float, float], p1: tuple[float, float], n_samples: int
) -> list[tuple[float, float]]:
    """Bilinear height samples along a segment.

    Endpoints are ``(x, y)`` pixel coordinates, i.e. ``(col, row)``. Returns
    ``(distance_m, height_m)`` pairs.
    """
    if n_samples < 2:
        raise InvalidInputError("line profile needs at least 2 samples")
    for name, (x, y) in (("p0", p0), ("p1", p1)):
        if not (0 <= x <= raster.width - 1 and 0 <= y <= raster.height - 1):
            raise InvalidInputError(f"{name}={p0 if name == 'p0' else p1} lies outside the raster")
    t = np.linspace(0.0, 1.0, n_samples)
    xs = p0[0] + t * (p1[0] - p0[0])
    ys = p0[1] + t * (p1[1] - p0[1])
    heights = bilinear_sample(raster.values, ys, xs)
    length = float(np.hypot(p1[0] - p0[0], p1[1] - p0[1])) * raster.cell_size
    return [(float(d), float(h)) for d, h in zip(t * length, heights)]


def profile_csv(profile: list[tuple[float, float]]) -> str:
    lines = ["distance_m,height_m"] + [f"{d!r},{h!r}" for d, h in profile]
    return "\n".join(lines) + "\n"
