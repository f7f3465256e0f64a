"""``gdsr synth|train|infer|eval`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric fault.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import MODES, PipelineConfig, desk_preset, load_config, parse_config_text
from .errors import ConfigError, DataError, NumericFaultError
from .evaluate import evaluate
from .infer import infer
from .raster import GuideRaster, HeightRaster, read_png_guide, read_raster, write_raster
from .synth import generate_dataset
from .train import train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config, desk_preset())
    if getattr(args, "mode", None):
        cfg = replace(cfg, mode=args.mode)
    return cfg


def _model_config(args, model_cfg: PipelineConfig) -> PipelineConfig | None:
    """Checkpoint config with ``--config`` overrides applied, or None without overrides."""
    if not args.config:
        return None
    return parse_config_text(Path(args.config).read_text(), model_cfg)


def _load_model(args):
    model = load_checkpoint(args.checkpoint)
    override = _model_config(args, model.config)
    if override is not None:
        # digest check: only inference-side knobs may differ from the checkpoint
        model = load_checkpoint(args.checkpoint, override)
        model.config = override
    return model


def _parse_profile(text: str) -> tuple[float, float, float, float, int]:
    parts = text.split(",")
    if len(parts) != 5:
        raise ConfigError(f"--profile expects x0,y0,x1,y1,n, got {text!r}")
    try:
        x0, y0, x1, y1 = map(float, parts[:4])
        n = int(parts[4])
    except ValueError as exc:
        raise ConfigError(f"--profile: {exc}") from None
    if n < 2:
        raise ConfigError("--profile needs n >= 2")
    return x0, y0, x1, y1, n


def cmd_synth(args) -> None:
    cfg = _config(args)
    if args.seed is not None:
        cfg = replace(cfg, scene=replace(cfg.scene, seed=args.seed))
    entries = generate_dataset(cfg.n_train, cfg.n_test, cfg.scene, cfg.degradation, args.out)
    (Path(args.out) / "config.txt").write_text(cfg.to_text())
    print(f"wrote {len(entries)} samples to {Path(args.out) / 'manifest.txt'}")


def cmd_train(args) -> None:
    cfg = _config(args)
    tp = cfg.trainer
    if args.seed is not None:
        tp = replace(tp, seed=args.seed)
    if args.lr is not None:
        tp = replace(tp, lr=args.lr)
    if args.max_iters is not None:
        tp = replace(tp, max_iters=args.max_iters)
    cfg = replace(cfg, trainer=tp)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, history = train(cfg, args.manifest)
    save_checkpoint(model, out / "model.ckpt")
    (out / "trainlog.csv").write_text(history.to_csv())
    (out / "config.txt").write_text(cfg.to_text())
    print(f"trained {model.step} iterations; checkpoint {out / 'model.ckpt'}")


def cmd_infer(args) -> None:
    model = _load_model(args)
    lr = read_raster(args.lr_dsm)
    if not isinstance(lr, HeightRaster):
        raise DataError(f"{args.lr_dsm}: expected a height raster")
    if str(args.guide).lower().endswith(".png"):
        guide = read_png_guide(args.guide, args.guide_cell_size or lr.cell_size / model.config.degradation.factor)
    else:
        guide = read_raster(args.guide)
        if not isinstance(guide, GuideRaster):
            raise DataError(f"{args.guide}: expected a guide raster")
    mode = args.mode or model.config.mode
    pred = infer(model, lr, guide, mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_raster(pred, out / f"prediction_{mode}.gdsr")
    print(f"wrote {out / f'prediction_{mode}.gdsr'}")


def cmd_eval(args) -> None:
    model = _load_model(args)
    mode = args.mode or model.config.mode
    profile = _parse_profile(args.profile) if args.profile else None
    res = evaluate(model, args.manifest, mode, args.out, split=None if args.split == "all" else args.split,
                   profile=profile)
    print(res.summary_csv(), end="")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gdsr", description="Guided DSM super-resolution.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, mode=True):
        p.add_argument("--config", help="key = value overrides; 'preset = full_scale|desk|fast' selects a base")
        p.add_argument("--out", required=True, help="output directory")
        if mode:
            p.add_argument("--mode", choices=MODES)

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    common(p, mode=False)
    p.add_argument("--seed", type=int, help="top-level dataset seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a manifest, write checkpoint and training log")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-iters", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve one LR raster with a guide")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lr-dsm", required=True)
    p.add_argument("--guide", required=True, help="GDSR guide raster or 8-bit PNG")
    p.add_argument("--guide-cell-size", type=float, help="cell size for PNG guides")
    p.add_argument("--seed", type=int, help="ignored; inference is deterministic")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="metrics CSVs on a manifest split, optional line profile")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--profile", help="x0,y0,x1,y1,n: segment endpoints in pixel coordinates, n samples")
    p.add_argument("--seed", type=int, help="ignored; evaluation is deterministic")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFaultError as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
