"""Seeded synthetic urban scenes and a lossy low-resolution degradation.

Randomness comes from numpy's Philox-4x64 counter-based generator (10
rounds, numpy's fixed multiplier/Weyl constants) keyed by the scene seed,
so outputs are reproducible across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError, InvalidInputError
from .raster import GuideRaster, HeightRaster, read_raster, write_raster

ROOF_PALETTE = np.array([
    [0.66, 0.31, 0.24],  # clay tiles
    [0.56, 0.56, 0.60],  # concrete
    [0.22, 0.23, 0.27],  # dark membrane
    [0.82, 0.80, 0.74],  # light gravel
    [0.45, 0.20, 0.16],  # dark tiles
])
GROUND_COLOR = np.array([0.36, 0.44, 0.30])


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))


@dataclass(frozen=True)
class SceneParams:
    seed: int = 0
    extent: int = 256
    cell_size: float = 0.5
    building_count_range: tuple[int, int] = (4, 12)
    building_height_range: tuple[float, float] = (4.0, 25.0)
    # footprint side lengths in pixels
    building_size_range: tuple[float, float] = (8.0, 40.0)
    terrain_amplitude: float = 3.0
    terrain_smoothness: float = 48.0
    base_height: float = 450.0
    rotated_fraction: float = 0.3
    gabled_fraction: float = 0.4
    texture_noise: float = 0.01

    def __post_init__(self):
        # canonical element types so equal configs serialize identically
        object.__setattr__(self, "building_count_range", tuple(int(v) for v in self.building_count_range))
        for name in ("building_height_range", "building_size_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.extent < 32:
            raise InvalidInputError(f"extent must be >= 32, got {self.extent}")
        if not self.cell_size > 0:
            raise InvalidInputError("cell_size must be positive")
        for name in ("building_count_range", "building_height_range", "building_size_range"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise InvalidInputError(f"{name} must be a non-empty non-negative interval, got {(lo, hi)}")
        if self.building_size_range[0] <= 0 and self.building_count_range[1] > 0:
            raise InvalidInputError("building sizes must be positive")
        if self.terrain_amplitude < 0 or self.terrain_smoothness <= 0 or self.texture_noise < 0:
            raise InvalidInputError("terrain amplitude / texture noise must be >= 0 and smoothness > 0")


@dataclass(frozen=True)
class DegradationParams:
    factor: int = 10
    blur_sigma: float = 2.0
    noise_sigma: float = 0.5
    erosion_radius: int = 2

    def __post_init__(self):
        if self.factor < 2:
            raise InvalidInputError(f"factor must be >= 2, got {self.factor}")
        if self.blur_sigma < 0 or self.noise_sigma < 0 or self.erosion_radius < 0:
            raise InvalidInputError("blur_sigma, noise_sigma and erosion_radius must be >= 0")


@dataclass(frozen=True)
class Building:
    row: float
    col: float
    half_length: float
    half_width: float
    angle: float
    height: float
    base: float
    gabled: bool
    color: tuple[float, float, float]

    @property
    def roof_drop(self) -> float:
        return min(0.35 * self.height, 4.0) if self.gabled else 0.0


@dataclass
class SceneLayout:
    terrain: np.ndarray
    buildings: list[Building] = field(default_factory=list)


def _terrain(rng: np.random.Generator, p: SceneParams) -> np.ndarray:
    noise = rng.standard_normal((p.extent, p.extent))
    # periodic smoothing in the Fourier domain; spatial "wrap" filtering breaks
    # down once the kernel is much longer than the grid
    field_ = np.fft.ifft2(ndimage.fourier_gaussian(np.fft.fft2(noise), p.terrain_smoothness)).real
    field_ -= field_.mean()
    std = field_.std()
    if std > 1e-12:
        field_ = field_ / std
    return p.base_height + p.terrain_amplitude * field_


def scene_layout(params: SceneParams) -> SceneLayout:
    """Terrain and building list for a seed; the raw material of :func:`generate_scene`."""
    rng = make_rng(params.seed)
    terrain = _terrain(rng, params)
    n = int(rng.integers(params.building_count_range[0], params.building_count_range[1] + 1))
    s_lo, s_hi = params.building_size_range
    h_lo, h_hi = params.building_height_range
    buildings = []
    for _ in range(n):
        length = rng.uniform(s_lo, s_hi)
        width = rng.uniform(s_lo, min(s_hi, length)) if length > s_lo else s_lo
        row = rng.uniform(0, params.extent)
        col = rng.uniform(0, params.extent)
        angle = rng.uniform(0, np.pi) if rng.random() < params.rotated_fraction else 0.0
        height = rng.uniform(h_lo, h_hi)
        gabled = bool(rng.random() < params.gabled_fraction)
        color = ROOF_PALETTE[rng.integers(len(ROOF_PALETTE))] + rng.uniform(-0.04, 0.04, 3)
        ri = min(int(row), params.extent - 1)
        ci = min(int(col), params.extent - 1)
        buildings.append(Building(row, col, length / 2, width / 2, angle, height,
                                  float(terrain[ri, ci]), gabled, tuple(np.clip(color, 0, 1))))
    return SceneLayout(terrain, buildings)


def footprint(b: Building, extent: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Pixel indices inside a building plus its roof height there."""
    reach = int(np.ceil(np.hypot(b.half_length, b.half_width))) + 1
    r0, r1 = max(int(b.row) - reach, 0), min(int(b.row) + reach + 1, extent)
    c0, c1 = max(int(b.col) - reach, 0), min(int(b.col) + reach + 1, extent)
    rr, cc = np.mgrid[r0:r1, c0:c1]
    dy = rr + 0.5 - b.row
    dx = cc + 0.5 - b.col
    cos, sin = np.cos(b.angle), np.sin(b.angle)
    u = dx * cos + dy * sin
    v = -dx * sin + dy * cos
    inside = (np.abs(u) <= b.half_length) & (np.abs(v) <= b.half_width)
    roof = b.base + b.height - b.roof_drop * np.abs(v[inside]) / max(b.half_width, 1e-9)
    return rr[inside], cc[inside], roof, inside


def hillshade(dsm: np.ndarray, cell_size: float, azimuth: float = 315.0, altitude: float = 45.0) -> np.ndarray:
    dzdy, dzdx = np.gradient(dsm, cell_size)
    slope = np.arctan(np.hypot(dzdx, dzdy))
    aspect = np.arctan2(dzdy, -dzdx)
    zen = np.radians(90.0 - altitude)
    az = np.radians(360.0 - azimuth + 90.0)
    shade = np.cos(zen) * np.cos(slope) + np.sin(zen) * np.sin(slope) * np.cos(az - aspect)
    return np.clip(shade, 0.0, 1.0)


def generate_scene(params: SceneParams) -> tuple[HeightRaster, GuideRaster]:
    layout = scene_layout(params)
    e = params.extent
    dsm = layout.terrain.copy()
    rng = make_rng(params.seed ^ 0x9E3779B97F4A7C15)

    # ground albedo with gentle low-frequency variation
    tint = ndimage.gaussian_filter(rng.standard_normal((3, e, e)), (0, 12, 12), mode="wrap")
    tint /= max(tint.std(), 1e-12)
    albedo = GROUND_COLOR[:, None, None] + 0.03 * tint

    for b in layout.buildings:
        rr, cc, roof, _ = footprint(b, e)
        top = roof >= dsm[rr, cc]
        dsm[rr[top], cc[top]] = roof[top]
        albedo[:, rr[top], cc[top]] = np.asarray(b.color)[:, None]

    shade = hillshade(dsm, params.cell_size)
    guide = albedo * (0.45 + 0.55 * shade)[None]
    if params.texture_noise > 0:
        guide = guide + params.texture_noise * rng.standard_normal(guide.shape)
    guide = np.clip(guide, 0.0, 1.0)
    return HeightRaster(dsm, params.cell_size), GuideRaster(guide, params.cell_size)


def _disk(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return yy * yy + xx * xx <= radius * radius


def block_mean(values: np.ndarray, factor: int) -> np.ndarray:
    h, w = values.shape
    return values.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def degrade(hr: HeightRaster, params: DegradationParams, seed: int = 0) -> HeightRaster:
    """Opening, Gaussian blur, block-average decimation, additive noise."""
    f = params.factor
    if hr.height % f or hr.width % f:
        raise InvalidInputError(f"raster {hr.shape} is not divisible by factor {f}")
    x = hr.values
    if params.erosion_radius > 0:
        x = ndimage.grey_opening(x, footprint=_disk(params.erosion_radius), mode="nearest")
    if params.blur_sigma > 0:
        x = ndimage.gaussian_filter(x, params.blur_sigma, mode="nearest")
    x = block_mean(x, f)
    if params.noise_sigma > 0:
        x = x + params.noise_sigma * make_rng(seed).standard_normal(x.shape)
    return HeightRaster(x, hr.cell_size * f)


# --------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    hr_path: Path
    lr_path: Path
    guide_path: Path
    seed: int

    @property
    def split(self) -> str:
        return self.id.split("-", 1)[0]

    def load(self) -> tuple[HeightRaster, HeightRaster, GuideRaster]:
        return read_raster(self.hr_path), read_raster(self.lr_path), read_raster(self.guide_path)


def sample_seeds(top_seed: int, n: int) -> list[int]:
    seeds = np.random.SeedSequence(int(top_seed)).generate_state(n, dtype=np.uint64) >> np.uint64(1)
    seeds = [int(s) for s in seeds]
    if len(set(seeds)) != n:
        raise DataError("seed collision while assigning sample seeds")
    return seeds


def write_manifest(entries: list[ManifestEntry], path: Path) -> None:
    root = path.parent
    lines = []
    for e in entries:
        rel = [str(Path(p).relative_to(root)) if Path(p).is_relative_to(root) else str(p)
               for p in (e.hr_path, e.lr_path, e.guide_path)]
        lines.append(" ".join([e.id, *rel, str(e.seed)]))
    path.write_text("\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    root = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise DataError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        sid, hr, lr, guide, seed = parts
        try:
            seed = int(seed)
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad seed {seed!r}") from None
        entries.append(ManifestEntry(sid, root / hr, root / lr, root / guide, seed))
    if not entries:
        raise DataError(f"{path}: manifest is empty")
    return entries


def generate_dataset(
    n_train: int,
    n_test: int,
    scene: SceneParams,
    degr: DegradationParams,
    out_dir: str | Path,
) -> list[ManifestEntry]:
    """Write HR/LR/guide rasters per sample and ``manifest.txt``.

    Sample seeds derive from ``scene.seed``; all seeds are distinct, so the
    train and test splits never share a scene.
    """
    if n_train < 1 or n_test < 1:
        raise InvalidInputError("n_train and n_test must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = sample_seeds(scene.seed, n_train + n_test)
    entries = []
    for i, seed in enumerate(seeds):
        split, idx = ("train", i) if i < n_train else ("test", i - n_train)
        sid = f"{split}-{idx:05d}"
        hr, guide = generate_scene(replace(scene, seed=seed))
        lr = degrade(hr, degr, seed=seed ^ 0x5DEECE66D)
        paths = [out / f"{sid}_{kind}.gdsr" for kind in ("hr", "lr", "guide")]
        for raster, p in zip((hr, lr, guide), paths):
            write_raster(raster, p)
        entries.append(ManifestEntry(sid, *paths, seed))
    write_manifest(entries, out / "manifest.txt")
    return entries
