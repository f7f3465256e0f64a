"""Pipeline configuration, presets and the ``key = value`` config file format.

Keys are dotted paths into :class:`PipelineConfig`, e.g.::

    preset = desk
    degradation.factor = 4
    diffusion.K = 0.05
    trainer.lr = 5e-4
    scene.building_count_range = 4, 12

``preset`` (if present) is applied first, the remaining keys override it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import types
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path

from .diffusion import DiffusionParams
from .errors import ConfigError, GDSRError
from .refine import RefineNetConfig
from .synth import DegradationParams, SceneParams

MODES = ("full", "refine_only", "diffusion_only", "bicubic_only")


@dataclass(frozen=True)
class TrainerParams:
    lr: float = 5e-5
    batch_size: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iters: int = 5000
    eval_every: int = 250
    patience: int = 5
    min_rel_improvement: float = 1e-3
    seed: int = 0
    # side of the random training crops; None trains on whole tiles
    crop_size: int | None = None
    # cap on test samples used for the periodic RMSE; None uses all
    eval_samples: int | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"trainer.lr must be positive, got {self.lr}")
        if self.batch_size < 1 or self.max_iters < 0 or self.eval_every < 1 or self.patience < 1:
            raise ConfigError("batch_size, eval_every and patience must be >= 1, max_iters >= 0")
        if self.crop_size is not None and self.crop_size < 8:
            raise ConfigError("trainer.crop_size must be >= 8")


@dataclass(frozen=True)
class PipelineConfig:
    scene: SceneParams = field(default_factory=SceneParams)
    degradation: DegradationParams = field(default_factory=DegradationParams)
    refine: RefineNetConfig = field(default_factory=RefineNetConfig)
    diffusion: DiffusionParams = field(default_factory=DiffusionParams)
    trainer: TrainerParams = field(default_factory=TrainerParams)
    n_train: int = 2000
    n_test: int = 200
    tile_size: int = 256
    tile_overlap: int = 64
    mode: str = "full"

    def __post_init__(self):
        if not 0 <= self.tile_overlap < self.tile_size:
            raise ConfigError(f"tile_overlap ({self.tile_overlap}) must lie in [0, tile_size={self.tile_size})")
        if self.tile_size % self.refine.size_multiple:
            raise ConfigError(f"tile_size must be a multiple of {self.refine.size_multiple}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_train and n_test must be >= 1")

    def to_text(self) -> str:
        return "\n".join(f"{k} = {_format(v)}" for k, v in flatten(self)) + "\n"

    def digest(self) -> str:
        """Hash of everything that determines the trained model's structure and meaning.

        Inference-only knobs (tiling, inference step count, mode) are excluded
        so one checkpoint can be evaluated under different settings.
        """
        keys = [
            (k, v) for k, v in flatten(self)
            if k.startswith(("refine.", "diffusion.")) and k != "diffusion.n_steps_infer"
        ]
        keys.append(("degradation.factor", self.degradation.factor))
        blob = "\n".join(f"{k} = {_format(v)}" for k, v in keys)
        return hashlib.sha256(blob.encode()).hexdigest()


def full_scale_preset() -> PipelineConfig:
    """Published hyperparameters: factor 10, 256 px tiles, K=0.001, 8000/1024 steps."""
    return PipelineConfig()


def desk_preset() -> PipelineConfig:
    """Small CPU-scale setup used by the synthetic benchmark."""
    return PipelineConfig(
        scene=SceneParams(extent=128, building_count_range=(3, 8)),
        degradation=DegradationParams(factor=4),
        diffusion=DiffusionParams(K=0.05, n_steps_total=256, n_steps_grad=256),
        trainer=TrainerParams(lr=5e-4, max_iters=3000, eval_every=250, crop_size=64, eval_samples=20),
        n_train=200,
        n_test=40,
        tile_size=128,
        tile_overlap=64,
    )


def fast_preset() -> PipelineConfig:
    """Desk preset with the shortened 1024-step inference diffusion."""
    cfg = desk_preset()
    return replace(cfg, diffusion=replace(cfg.diffusion, n_steps_infer=1024))


PRESETS = {"full_scale": full_scale_preset, "desk": desk_preset, "fast": fast_preset}


# --------------------------------------------------------------------------
# flatten / parse


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def flatten(cfg, prefix: str = "") -> list[tuple[str, object]]:
    out = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            out += flatten(v, f"{prefix}{f.name}.")
        else:
            out.append((f"{prefix}{f.name}", v))
    return out


def _convert(raw: str, tp, key: str):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if raw.lower() == "none" and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(raw, inner[0], key)
    if origin is tuple:
        parts = [p for p in raw.replace(",", " ").split()]
        if len(parts) != len(args):
            raise ConfigError(f"{key}: expected {len(args)} values, got {raw!r}")
        return tuple(_convert(p, a, key) for p, a in zip(parts, args))
    try:
        if tp is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {tp.__name__}") from None
    raise ConfigError(f"{key}: unsupported field type {tp}")


def _apply(cfg, overrides: dict[str, str], prefix: str = ""):
    """Apply ``{dotted_key: raw_value}`` overrides to a dataclass in one ``replace``."""
    hints = typing.get_type_hints(type(cfg))
    direct: dict[str, object] = {}
    nested: dict[str, dict[str, str]] = {}
    for key, raw in overrides.items():
        name, _, rest = key.partition(".")
        full = prefix + key
        if name not in hints:
            raise ConfigError(f"unknown config key {full!r}")
        current = getattr(cfg, name)
        if dataclasses.is_dataclass(current):
            if not rest:
                raise ConfigError(f"{full!r} is a section, not a value")
            nested.setdefault(name, {})[rest] = raw
        elif rest:
            raise ConfigError(f"unknown config key {full!r}")
        else:
            direct[name] = _convert(raw, hints[name], full)
    for name, sub in nested.items():
        direct[name] = _apply(getattr(cfg, name), sub, f"{prefix}{name}.")
    return replace(cfg, **direct) if direct else cfg


def parse_config_text(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    overrides: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        overrides[key] = value

    cfg = base
    preset = overrides.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = PRESETS[preset]()
    if cfg is None:
        cfg = PipelineConfig()
    try:
        return _apply(cfg, overrides)
    except ConfigError:
        raise
    except (GDSRError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None, base: PipelineConfig | None = None) -> PipelineConfig:
    if path is None:
        return base or PipelineConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, base)
