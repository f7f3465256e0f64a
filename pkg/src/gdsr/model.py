"""Refinement network + guided diffusion, and single-patch inference."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grad as gc
from .config import MODES, PipelineConfig
from .diffusion import GuidedDiffusion
from .errors import ConfigError, ShapeError
from .raster import NormStats
from .refine import RefineNet, RefineNetConfig, build_refine_net


@dataclass
class GDSRModel:
    config: PipelineConfig
    stats: NormStats
    net: RefineNet
    diffusion: GuidedDiffusion
    step: int = 0
    rng_state: dict | None = field(default=None, repr=False)

    @classmethod
    def create(cls, config: PipelineConfig, stats: NormStats, seed: int | None = None) -> GDSRModel:
        seed = config.trainer.seed if seed is None else seed
        if stats.channels != config.refine.guide_channels:
            raise ShapeError(
                f"norm stats have {stats.channels} guide channels, config expects {config.refine.guide_channels}"
            )
        return cls(
            config,
            stats,
            build_refine_net(config.refine, seed),
            GuidedDiffusion(config.diffusion, config.refine.guide_channels, seed),
        )

    def named_parameters(self) -> list[gc.Parameter]:
        return self.net.parameters() + self.diffusion.parameters()

    def trainable(self, mode: str) -> list[gc.Parameter]:
        if mode == "full":
            return self.named_parameters()
        if mode == "refine_only":
            return self.net.parameters()
        if mode == "diffusion_only":
            return self.diffusion.parameters()
        return []

    def forward(self, dsm: gc.Tensor, guide: gc.Tensor, mode: str, training: bool = False):
        """Return ``(refined, final)`` in normalized height units."""
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}")
        refined = self.net(dsm, guide) if mode in ("full", "refine_only") else dsm
        final = self.diffusion(refined, guide, training=training) if mode in ("full", "diffusion_only") else refined
        return refined, final


def _pad_to(a: np.ndarray, multiple: int) -> tuple[np.ndarray, int, int]:
    h, w = a.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        pad = [(0, 0)] * (a.ndim - 2) + [(0, ph), (0, pw)]
        a = np.pad(a, pad, mode="edge")
    return a, ph, pw


def infer_patch(model: GDSRModel, bicubic: np.ndarray, guide_norm: np.ndarray, mode: str) -> np.ndarray:
    """Super-resolve one patch already on the HR grid.

    ``bicubic`` is the upsampled DSM in meters, ``guide_norm`` the normalized
    guide ``[C, H, W]``. The patch is normalized with its own mean and the
    global std; the result is written as ``bicubic + std * (out - in)`` so
    that a zero residual reproduces the input bit for bit.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    if guide_norm.shape[1:] != bicubic.shape:
        raise ShapeError(f"guide {guide_norm.shape} does not match patch {bicubic.shape}")
    if mode == "bicubic_only":
        return bicubic.copy()
    h, w = bicubic.shape
    std = model.stats.dsm_global_std
    local_mean = float(bicubic.mean())
    dt = gc.get_dtype()
    x = ((bicubic - local_mean) / std).astype(dt)
    xp, _, _ = _pad_to(x, model.config.refine.size_multiple)
    gp, _, _ = _pad_to(guide_norm.astype(dt), model.config.refine.size_multiple)
    _, final = model.forward(gc.Tensor(xp[None, None]), gc.Tensor(gp[None]), mode)
    residual = final.data[0, 0, :h, :w] - x
    return bicubic + residual.astype(np.float64) * std
