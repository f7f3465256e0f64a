"""End-to-end training with the summed refinement + diffusion L1 loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import grad as gc
from .config import PipelineConfig
from .errors import DataError, NumericFaultError, ShapeError
from .model import GDSRModel
from .raster import GuideRaster, HeightRaster, bicubic_array, compute_norm_stats, normalize_guide
from .synth import ManifestEntry, make_rng, read_manifest

log = logging.getLogger(__name__)


@dataclass
class Sample:
    id: str
    hr: np.ndarray
    lr: HeightRaster
    guide: GuideRaster
    bicubic: np.ndarray


@dataclass
class TrainLog:
    rows: list[tuple[int, float, float | None]] = field(default_factory=list)
    stopped_early: bool = False

    def losses(self) -> list[float]:
        return [r[1] for r in self.rows]

    def to_csv(self) -> str:
        lines = ["iter,loss,test_rmse"]
        for it, loss, rmse in self.rows:
            lines.append(f"{it},{loss!r},{'' if rmse is None else repr(rmse)}")
        return "\n".join(lines) + "\n"


def load_samples(entries: list[ManifestEntry], factor: int) -> list[Sample]:
    samples = []
    for e in entries:
        hr, lr, guide = e.load()
        if not isinstance(hr, HeightRaster) or not isinstance(lr, HeightRaster) or not isinstance(guide, GuideRaster):
            raise DataError(f"{e.id}: unexpected raster kinds in manifest triple")
        if guide.shape != hr.shape:
            raise ShapeError(f"{e.id}: guide {guide.shape} does not match HR {hr.shape}")
        if (lr.height * factor, lr.width * factor) != hr.shape:
            raise ShapeError(f"{e.id}: LR {lr.shape} x{factor} does not match HR {hr.shape}")
        bic = bicubic_array(lr.values, hr.height, hr.width)
        samples.append(Sample(e.id, hr.values, lr, guide, bic))
    return samples


def split_entries(entries: list[ManifestEntry]) -> tuple[list[ManifestEntry], list[ManifestEntry]]:
    train = [e for e in entries if e.split == "train"]
    test = [e for e in entries if e.split == "test"]
    if not train:
        raise DataError("manifest has no training entries (ids starting with 'train-')")
    return train, test


def _batch(samples, guides, idx, rng, crop, std, dt):
    xs, gs, ts = [], [], []
    for i in idx:
        s = samples[i]
        h, w = s.hr.shape
        if crop is None or crop >= min(h, w):
            r0 = c0 = 0
            ch, cw = h, w
        else:
            r0 = int(rng.integers(0, h - crop + 1))
            c0 = int(rng.integers(0, w - crop + 1))
            ch = cw = crop
        b = s.bicubic[r0:r0 + ch, c0:c0 + cw]
        m = b.mean()
        xs.append((b - m) / std)
        ts.append((s.hr[r0:r0 + ch, c0:c0 + cw] - m) / std)
        gs.append(guides[i][:, r0:r0 + ch, c0:c0 + cw])
    return (gc.Tensor(np.stack(xs)[:, None].astype(dt)),
            gc.Tensor(np.stack(gs).astype(dt)),
            gc.Tensor(np.stack(ts)[:, None].astype(dt)))


def train(
    config: PipelineConfig,
    manifest: str | Path | list[ManifestEntry],
    *,
    mode: str | None = None,
    progress: Callable[[int, float, float | None], None] | None = None,
) -> tuple[GDSRModel, TrainLog]:
    """Train a model on the ``train-`` entries of a manifest.

    The periodic test RMSE uses the ``test-`` entries; training stops at
    ``max_iters`` or when that RMSE improved by less than
    ``min_rel_improvement`` for ``patience`` consecutive evaluations.
    """
    from .evaluate import evaluate_samples

    mode = mode or config.mode
    if mode != config.mode:
        config = replace(config, mode=mode)
    tp = config.trainer
    entries = read_manifest(manifest) if not isinstance(manifest, list) else manifest
    train_entries, test_entries = split_entries(entries)
    samples = load_samples(train_entries, config.degradation.factor)
    test_samples = load_samples(test_entries[: tp.eval_samples] if tp.eval_samples else test_entries,
                                config.degradation.factor)

    stats = compute_norm_stats([HeightRaster(s.hr) for s in samples], [s.guide for s in samples])
    model = GDSRModel.create(config, stats)
    guides = [normalize_guide(s.guide, stats).values for s in samples]
    params = model.trainable(mode)
    rng = make_rng(tp.seed)
    history = TrainLog()
    if not params or tp.max_iters == 0:
        model.rng_state = rng.bit_generator.state
        return model, history

    dt = gc.get_dtype()
    std = stats.dsm_global_std
    best = np.inf
    stale = 0
    for it in range(1, tp.max_iters + 1):
        idx = rng.integers(0, len(samples), tp.batch_size)
        x, g, target = _batch(samples, guides, idx, rng, tp.crop_size, std, dt)
        try:
            refined, final = model.forward(x, g, mode, training=True)
            if mode == "full":
                loss = gc.add(gc.l1_loss(refined, target), gc.l1_loss(final, target))
            elif mode == "refine_only":
                loss = gc.l1_loss(refined, target)
            else:
                loss = gc.l1_loss(final, target)
            gc.zero_grad(params)
            gc.backward(loss)
            gc.adam_step(params, tp.lr, tp.beta1, tp.beta2, tp.eps)
        except NumericFaultError as exc:
            raise NumericFaultError(exc.op, f"{exc} at iteration {it}") from exc
        model.step = it

        test_rmse = None
        if test_samples and it % tp.eval_every == 0:
            test_rmse = evaluate_samples(model, test_samples, mode).mean.rmse
            if test_rmse < best * (1.0 - tp.min_rel_improvement):
                stale = 0
            else:
                stale += 1
            best = min(best, test_rmse)
        history.rows.append((it, loss.item(), test_rmse))
        if progress is not None:
            progress(it, loss.item(), test_rmse)
        if test_rmse is not None:
            log.info("iter %d loss %.5f test_rmse %.4f", it, loss.item(), test_rmse)
        if stale >= tp.patience:
            history.stopped_early = True
            break
    model.rng_state = rng.bit_generator.state
    return model, history

