"""Guided super-resolution of digital surface models.

A residual refinement network upsamples a bicubic DSM estimate with the help
of a co-registered guide image, and a guide-driven anisotropic diffusion
sharpens the result along guide edges. Everything runs on numpy with a small
reverse-mode autodiff engine in :mod:`gdsr.grad`.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import PipelineConfig, TrainerParams, desk_preset, fast_preset, load_config, full_scale_preset
from .diffusion import DiffusionParams, run_diffusion
from .errors import ConfigError, DataError, GDSRError, NumericFaultError
from .evaluate import evaluate
from .infer import infer
from .metrics import MetricsReport, medae, nmad, rmse
from .model import GDSRModel
from .raster import GuideRaster, HeightRaster, bicubic_resample, read_raster, write_raster
from .refine import RefineNetConfig, receptive_field_radius
from .synth import DegradationParams, SceneParams, generate_dataset
from .train import train

__all__ = [
    "ConfigError", "DataError", "DegradationParams", "DiffusionParams", "GDSRError", "GDSRModel",
    "GuideRaster", "HeightRaster", "MetricsReport", "NumericFaultError", "PipelineConfig",
    "RefineNetConfig", "SceneParams", "TrainerParams", "bicubic_resample", "desk_preset", "evaluate",
    "fast_preset", "generate_dataset", "infer", "load_checkpoint", "load_config", "medae", "nmad",
    "full_scale_preset", "read_raster", "receptive_field_radius", "rmse", "run_diffusion", "save_checkpoint",
    "train", "write_raster",
]
