from dataclasses import replace

import numpy as np
import pytest

from gdsr.config import PipelineConfig, TrainerParams
from gdsr.diffusion import DiffusionParams
from gdsr.refine import RefineNetConfig
from gdsr.synth import DegradationParams, SceneParams, generate_dataset


def tiny_config(**trainer) -> PipelineConfig:
    """Seconds-scale pipeline: 32 px scenes, factor 4, an 8-channel net."""
    tp = dict(lr=1e-3, max_iters=0, eval_every=10, crop_size=16, eval_samples=2)
    tp.update(trainer)
    return PipelineConfig(
        scene=SceneParams(seed=3, extent=32, building_count_range=(1, 3), building_size_range=(6, 14)),
        degradation=DegradationParams(factor=4),
        refine=RefineNetConfig(hidden_dim=8, n_res_blocks=1, n_scale_stages=1),
        diffusion=DiffusionParams(K=0.05, n_steps_total=16, n_steps_grad=8),
        trainer=TrainerParams(**tp),
        n_train=4,
        n_test=2,
        tile_size=32,
        tile_overlap=16,
    )


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    cfg = tiny_config()
    out = tmp_path_factory.mktemp("tiny")
    generate_dataset(cfg.n_train, cfg.n_test, cfg.scene, cfg.degradation, out)
    return out / "manifest.txt"


@pytest.fixture(scope="session")
def wide_dataset(tmp_path_factory):
    """Two 64 px scenes, large enough to need several 32 px tiles."""
    cfg = tiny_config()
    out = tmp_path_factory.mktemp("wide")
    generate_dataset(2, 1, replace(cfg.scene, extent=64), cfg.degradation, out)
    return out / "manifest.txt"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
